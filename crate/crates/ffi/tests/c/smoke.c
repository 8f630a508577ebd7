#include <math.h>
#include <stdio.h>
#include <string.h>

#include "qpat.h"

#define CHECK(cond)                                                     \
  do {                                                                  \
    if (!(cond)) {                                                      \
      const char *msg = qpat_last_error_message();                      \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,    \
              msg ? msg : "no error");                                  \
      return 1;                                                         \
    }                                                                   \
  } while (0)

int main(void) {
  CHECK(strlen(qpat_version()) > 0);

  double px[4] = {10.0, 20.0, 30.0, 40.0};
  QpatImage *img = NULL;
  CHECK(qpat_image_new(2, 2, 0.1, -0.1, -0.1, px, &img) == QPAT_STATUS_OK);
  QpatImage *mu = NULL;
  CHECK(qpat_apply_calibration(img, 10.0, 10.0, &mu) == QPAT_STATUS_OK);
  double out[4];
  CHECK(qpat_image_copy_data(mu, out, 4) == QPAT_STATUS_OK);
  CHECK(out[0] == 0.0 && out[3] == 3.0);
  CHECK(qpat_image_copy_data(mu, out, 3) == QPAT_STATUS_INVALID_ARGUMENT);
  CHECK(qpat_last_error_message() != NULL);
  qpat_image_free(mu);
  qpat_image_free(img);

  CHECK(qpat_apply_calibration(NULL, 1.0, 0.0, &mu) == QPAT_STATUS_INVALID_ARGUMENT);
  CHECK(qpat_image_read("/nonexistent/image.bin", &img) == QPAT_STATUS_IO);

  double a[3] = {1, 2, 3}, b[3] = {4, 5, 6};
  double u, p;
  CHECK(qpat_mann_whitney(a, 3, b, 3, &u, &p) == QPAT_STATUS_OK);
  CHECK(u == 0.0 && fabs(p - 0.1) < 1e-12);

  double r, t;
  CHECK(qpat_ad_forward(0.0, 0.0, 0.7, 1.0, 1.0, &r, &t) == QPAT_STATUS_OK);
  CHECK(fabs(r) < 1e-6 && fabs(t - 1.0) < 1e-6);

  QpatPhantom *ph = NULL;
  CHECK(qpat_phantom_sample("c_000", 5, true, &ph) == QPAT_STATUS_OK);
  size_t count = 99;
  CHECK(qpat_phantom_inclusion_count(ph, &count) == QPAT_STATUS_OK && count == 0);
  qpat_phantom_free(ph);

  QpatPipelineConfig *cfg = NULL;
  CHECK(qpat_pipeline_config_from_json("{\"bogus\": 1}", &cfg) == QPAT_STATUS_CONFIG);
  CHECK(cfg == NULL);
  puts("ok");
  return 0;
}
