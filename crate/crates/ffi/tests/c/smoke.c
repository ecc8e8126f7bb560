/* Exercises the C header end to end; exit status 0 means every check held. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "allee_ffi.h"

#define CHECK(cond)                                                    \
    do {                                                               \
        if (!(cond)) {                                                 \
            fprintf(stderr, "check failed at line %d: %s (%s)\n",      \
                    __LINE__, #cond, allee_last_error());              \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(void) {
    AlleeGraph *g = NULL;
    CHECK(allee_graph_ring(12, &g) == ALLEE_STATUS_OK);
    CHECK(allee_graph_vertex_count(g) == 12);
    CHECK(allee_graph_edge_count(g) == 12);

    AlleeInit init = {ALLEE_INIT_BERNOULLI, 0, 0.5};
    AlleeRunResult run;
    CHECK(allee_run(g, 0.4, 0.2, init, 7, 100000000ULL, &run) == ALLEE_STATUS_OK);
    CHECK(run.outcome == ALLEE_OUTCOME_EXPANSION || run.outcome == ALLEE_OUTCOME_EXTINCTION);
    CHECK(run.events > 0 && !isnan(run.t_absorb));

    AlleeEstimate est;
    AlleeInit single = {ALLEE_INIT_SINGLE, 0, 0.0};
    CHECK(allee_estimate_expansion(g, 0.3, 0.2, single, 50, 1, 100000000ULL, &est) == ALLEE_STATUS_OK);
    CHECK(est.n_rep == 50 && est.n_expand + est.n_extinct + est.n_undecided == 50);
    CHECK(est.ci_lo <= est.p_hat && est.p_hat <= est.ci_hi);

    CHECK(allee_run(g, 1.5, 0.2, init, 7, 10, &run) == ALLEE_STATUS_INVALID_ARGUMENT);
    CHECK(strstr(allee_last_error(), "theta") != NULL);
    CHECK(allee_run(g, 0.4, 0.2, init, 7, 10, NULL) == ALLEE_STATUS_NULL_POINTER);
    allee_graph_free(g);

    size_t pairs[] = {0, 1, 1, 2};
    CHECK(allee_graph_from_edges(3, pairs, 2, &g) == ALLEE_STATUS_OK);
    CHECK(allee_graph_edge_count(g) == 2);
    allee_graph_free(g);
    size_t loop[] = {1, 1};
    CHECK(allee_graph_from_edges(3, loop, 1, &g) == ALLEE_STATUS_INVALID_ARGUMENT);

    AlleeLemma6 l6;
    CHECK(allee_lemma6_complement(95.0, &l6) == ALLEE_STATUS_OK);
    CHECK(l6.passes);
    CHECK(fabs(l6.x_tail.linear / 6.54300437797446e-18 - 1.0) < 1e-10);

    AlleeLogValue thr;
    CHECK(allee_theorem2_threshold(0.5, &thr) == ALLEE_STATUS_OK);
    CHECK(thr.underflow && thr.linear == 0.0);

    AlleeDispersionScale ds;
    CHECK(allee_dispersion_scale(0.5, 0.2, 100, &ds) == ALLEE_STATUS_OK);
    CHECK(ds.n == 4);

    printf("allee %s: C smoke test passed\n", allee_version());
    return 0;
}
