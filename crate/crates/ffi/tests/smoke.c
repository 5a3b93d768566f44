#include <stdio.h>
#include <string.h>
#include "solar_smdp.h"

int main(void) {
    SmdpModel *model = NULL;
    SmdpPolicy *policy = NULL;
    double gain = 0.0, mean = 0.0, sd = 0.0;
    size_t idx = 0;
    int8_t action = 9;

    if (smdp_model_table2(&model) != SMDP_STATUS_OK) return 1;
    if (smdp_model_num_states(model) != 126) return 2;
    if (smdp_solve_average(model, &policy, &gain) != SMDP_STATUS_OK) return 3;
    if (smdp_state_index(model, 1, 20, 1, &idx) != SMDP_STATUS_OK) return 4;
    if (smdp_policy_action(policy, idx, &action) != SMDP_STATUS_OK || action != 1) return 5;
    if (smdp_simulate(model, policy, 600.0, 2, 42, &mean, &sd) != SMDP_STATUS_OK) return 6;
    if (smdp_model_from_toml("solar = 1", &model) != SMDP_STATUS_CONFIG) return 7;
    if (strlen(smdp_last_error()) == 0) return 8;
    printf("gain %.4f mean %.4f\n", gain, mean);
    smdp_policy_free(policy);
    smdp_model_free(model);
    return 0;
}
