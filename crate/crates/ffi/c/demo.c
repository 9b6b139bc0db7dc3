/* Plans a short motion with the built-in arm and prints its hand path. */
#include <stdio.h>

#include "advplan.h"

int main(void) {
    AdvplanChain *chain = advplan_chain_default();
    size_t dof = advplan_chain_dof(chain);
    double start[7] = {0};
    double target[3] = {0.30, 0.10, 0.20};
    double goals[8 * 7];
    size_t found = 0;
    if (advplan_sample_goal_states(chain, target, 8, 1, goals, 8, &found) != ADVPLAN_STATUS_OK) {
        fprintf(stderr, "goal sampling failed: %s\n", advplan_last_error());
        return 1;
    }

    AdvplanPlannerParams params = advplan_planner_defaults();
    params.budget = 500;
    AdvplanMotion *motion = NULL;
    AdvplanStatus st = advplan_plan(chain, NULL, NULL, start, goals, found, params, &motion);
    if (st != ADVPLAN_STATUS_OK) {
        fprintf(stderr, "planning failed (%d): %s\n", (int)st, advplan_last_error());
        return 1;
    }

    size_t n = advplan_motion_len(motion);
    const double *states = advplan_motion_states(motion);
    for (size_t i = 0; i < n; i++) {
        double m[9];
        advplan_forward_kinematics(chain, states + i * dof, dof, m);
        printf("%zu %.4f %.4f %.4f\n", i, m[6], m[7], m[8]);
    }
    printf("cost %.6f\n", advplan_motion_cost(motion));

    advplan_motion_free(motion);
    advplan_chain_free(chain);
    return 0;
}
