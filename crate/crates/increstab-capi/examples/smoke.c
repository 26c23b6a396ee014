/* End-to-end exercise of the C ABI: open the built-in system, integrate its
 * closed loop, quantize it, solve the scheduled reach-avoid-stay game, and
 * replay the strategy against the continuous dynamics.
 *
 * Build (after `cargo build -p increstab-capi`):
 *   cc -std=c99 -Wall -Wextra -Werror -Icrates/increstab-capi/include \
 *      crates/increstab-capi/examples/smoke.c \
 *      -Ltarget/debug -lincrestab_capi -lm -o smoke
 *   LD_LIBRARY_PATH=target/debug ./smoke
 */
#include <stdio.h>
#include <string.h>
#include "increstab.h"

static int fails = 0;
#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "FAIL %s:%d: %s\n", __FILE__, __LINE__, #cond); fails++; } } while (0)

int main(void) {
    CHECK(increstab_required_gain(5.0, 25.0) == 15.5);

    IncrestabSystem *sys = NULL;
    CHECK(increstab_system_open("sat-cascade", &sys) == INCRESTAB_STATUS_OK);
    CHECK(increstab_system_state_dim(sys) == 2);
    CHECK(increstab_system_input_dim(sys) == 1);

    IncrestabSystem *bogus = NULL;
    IncrestabStatus st = increstab_system_open("nope", &bogus);
    CHECK(st == INCRESTAB_STATUS_INVALID_ARGUMENT);
    char msg[128];
    size_t len = increstab_last_error(msg, sizeof msg);
    CHECK(len > 0 && strstr(msg, "nope") != NULL);
    CHECK(strcmp(increstab_status_name(st), "invalid argument") == 0);

    double x0[2] = {0.8, 0.9}, u[1] = {0.0}, end[2];
    CHECK(increstab_closed_loop_endpoint(sys, x0, u, 2.0, 1e-3, end) == INCRESTAB_STATUS_OK);
    CHECK(end[0] > -0.05 && end[0] < 0.05 && end[1] > -0.05 && end[1] < 0.05);

    double dlo[2] = {-1.0, -1.0}, dhi[2] = {1.0, 1.0};
    double ilo[1] = {-10.0}, ihi[1] = {10.0};
    IncrestabAbstraction *abs = NULL;
    CHECK(increstab_abstraction_build(sys, dlo, dhi, 0.05, ilo, ihi, 0.5, 0.1, 1e-3, &abs) == INCRESTAB_STATUS_OK);
    CHECK(increstab_abstraction_n_states(abs) == 1681);
    CHECK(increstab_abstraction_n_inputs(abs) == 41);

    double tlo[2] = {-0.05, -0.05}, thi[2] = {0.05, 0.05};
    double obs[8] = {0.3, 0.3, 0.5, 0.5, -0.5, -0.5, -0.3, -0.3};
    IncrestabController *ctrl = NULL;
    CHECK(increstab_synthesize(abs, "auu", 1, tlo, thi, obs, 2, &ctrl) == INCRESTAB_STATUS_OK);
    CHECK(increstab_controller_n_winning(ctrl) > 0);

    int64_t entered = -2; size_t tail = 0; double fin[2];
    CHECK(increstab_replay(sys, abs, ctrl, tlo, thi, obs, 2, dlo, dhi, x0, 160, 1e-3,
                           &entered, &tail, fin) == INCRESTAB_STATUS_OK);
    CHECK(entered >= 0 && entered <= 60);
    CHECK(tail >= 100);

    increstab_controller_free(ctrl);
    increstab_abstraction_free(abs);
    increstab_system_free(sys);

    if (fails == 0) printf("c smoke test: all checks passed (entered=%lld tail=%zu)\n", (long long)entered, tail);
    return fails == 0 ? 0 : 1;
}
