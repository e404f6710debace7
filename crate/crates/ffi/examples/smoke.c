/* Minimal C client: builds a model, explains a pair, checks the maps. */
#include <stdio.h>
#include <stdlib.h>

#include "xssab.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    XssabStatus s_ = (call);                                               \
    if (s_ != XSSAB_STATUS_OK) {                                           \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,                    \
              xssab_last_error_message());                                 \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  enum { H = 16, W = 16, N = H * W * 3 };
  XssabModel *model = NULL;
  CHECK(xssab_model_new("tiny-cnn", 7, H, W, 8, &model));

  unsigned char pa[N], pb[N];
  for (int i = 0; i < N; i++) {
    pa[i] = (unsigned char)(i * 7 % 251);
    pb[i] = (unsigned char)(i * 11 % 241);
  }
  double a[N], b[N];
  CHECK(xssab_preprocess(pa, H, W, a, N));
  CHECK(xssab_preprocess(pb, H, W, b, N));

  double score = 0.0;
  XssabMap *ma = NULL, *mb = NULL;
  CHECK(xssab_explain_pair(model, a, b, N, 0.1, &score, &ma, &mb));

  size_t h = 0, w = 0;
  CHECK(xssab_map_shape(ma, &h, &w));
  double *fused = malloc(h * w * sizeof(double));
  CHECK(xssab_map_copy(ma, XSSAB_MAP_LAYER_FUSED, fused, h * w));

  if (xssab_map_copy(ma, XSSAB_MAP_LAYER_FUSED, fused, 3) != XSSAB_STATUS_INVALID_ARGUMENT) {
    fprintf(stderr, "short buffer accepted\n");
    return 1;
  }
  printf("score %.6f map %zux%zu fused[0] %.6e\n", score, h, w, fused[0]);

  free(fused);
  xssab_map_free(ma);
  xssab_map_free(mb);
  xssab_model_free(model);
  return 0;
}
