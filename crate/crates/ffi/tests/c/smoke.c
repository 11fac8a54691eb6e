#include <stdio.h>
#include <string.h>
#include "quadtorque.h"

int main(int argc, char **argv) {
    QtEnv *env = NULL;
    const char *cfg = argc > 1 ? argv[1] : NULL;
    if (qt_env_new(cfg, 0, true, &env) != QT_STATUS_OK) {
        fprintf(stderr, "env: %s\n", qt_last_error());
        return 1;
    }
    size_t n_obs = qt_env_obs_dim(env), n_act = qt_env_act_dim(env);
    if (n_obs != 48 || n_act != 12) return 2;

    double obs[48], act[12], reward = 0.0;
    QtDone done = QT_DONE_RUNNING;
    memset(act, 0, sizeof act);
    if (qt_env_reset(env, 1, obs, n_obs) != QT_STATUS_OK) return 3;
    for (int i = 0; i < 50; i++) {
        if (qt_env_step(env, act, n_act, obs, n_obs, &reward, &done) != QT_STATUS_OK) return 4;
        if (done != QT_DONE_RUNNING) qt_env_reset(env, 2, obs, n_obs);
    }
    if (qt_env_step(env, act, 11, obs, n_obs, &reward, &done) != QT_STATUS_SHAPE_MISMATCH) return 5;
    if (qt_last_error() == NULL) return 6;

    QtPolicy *policy = NULL;
    if (qt_policy_load("/nonexistent.qtck", &policy) != QT_STATUS_IO || policy != NULL) return 7;

    qt_env_free(env);
    printf("ok %s\n", qt_version());
    return 0;
}
