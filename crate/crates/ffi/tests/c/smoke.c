#include <stdio.h>
#include <stdlib.h>
#include "afecl.h"

int main(int argc, char **argv) {
    if (argc != 2) return 64;
    AfeclGraph *g = NULL;
    if (afecl_graph_load(argv[1], &g) != AFECL_STATUS_OK) {
        fprintf(stderr, "load: %s\n", afecl_last_error());
        return 1;
    }
    AfeclModel *m = NULL;
    AfeclStatus s = afecl_train(g, "{\"temperature\": 0.5, \"epochs\": 2, \"heads\": 1, \"hidden\": 2}", &m);
    if (s != AFECL_STATUS_OK) {
        fprintf(stderr, "train: %s\n", afecl_last_error());
        return 2;
    }
    size_t rows = 0, cols = 0;
    afecl_model_embedding_shape(m, &rows, &cols);
    double *buf = malloc(rows * cols * sizeof(double));
    if (afecl_model_copy_embeddings(m, buf, rows * cols) != AFECL_STATUS_OK) return 3;
    AfeclModel *bad = NULL;
    if (afecl_train(g, "{}", &bad) != AFECL_STATUS_CONFIG || bad != NULL) return 4;
    printf("version %s rows %zu cols %zu first %.6f\n", afecl_version(), rows, cols, buf[0]);
    free(buf);
    afecl_model_free(m);
    afecl_graph_free(g);
    return 0;
}
