#include <stdio.h>
#include <stdlib.h>

#include "optseq.h"

#define CHECK(call)                                                         \
    do {                                                                    \
        OsStatus st_ = (call);                                              \
        if (st_ != OS_STATUS_OK) {                                          \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)st_,       \
                    os_last_error());                                       \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    OsModel *model = NULL;
    OsDesign *design = NULL;
    OsPolicy *policy = NULL;
    double l0, l1, e, upper, lower;
    size_t n;
    OsStatistic unit = {OS_STATISTIC_KIND_UNIT, 0.0};
    OsSimulation sim;

    CHECK(os_model_iid(1.0, 1.0, &model));
    CHECK(os_design(model, 0.1, 0.1, 101, 1, &design));
    CHECK(os_design_lambda(design, &l0, &l1));
    CHECK(os_design_expected_run_length(design, &e));
    CHECK(os_design_num_cells(design, &n));
    double *rho = malloc(n * sizeof(double));
    if (os_design_rho(design, rho, n - 1) != OS_STATUS_BUFFER_TOO_SMALL) {
        return 2;
    }
    CHECK(os_design_rho(design, rho, n));
    CHECK(os_design_policy(design, &policy));
    CHECK(os_policy_thresholds(policy, unit, &upper, &lower));
    CHECK(os_simulate(policy, model, 0, 2000, 3, &sim));
    if (os_design(NULL, 0.1, 0.1, 101, 1, &design) != OS_STATUS_NULL_POINTER) {
        return 3;
    }
    printf("lambda %.6f %.6f E %.6f cells %zu A %.6f B %.6f mc %.4f\n", l0, l1, e,
           n, upper, lower, sim.mean_run_length);
    free(rho);
    os_policy_free(policy);
    os_design_free(design);
    os_model_free(model);
    return 0;
}
