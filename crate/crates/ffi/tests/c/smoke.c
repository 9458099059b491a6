#include <stdio.h>
#include <string.h>
#include "depthac.h"

int main(int argc, char **argv) {
    AcdkModel *m = NULL;
    if (depthac_model_init(7, 3, &m) != ACDK_STATUS_OK) return 1;

    double img[16 * 16 * 3];
    for (int i = 0; i < 16 * 16 * 3; i++) img[i] = (double)(i % 17) / 16.0;
    double disp[16 * 16];
    if (depthac_model_predict(m, img, 16, 16, 3, disp) != ACDK_STATUS_OK) return 2;
    for (int i = 0; i < 16 * 16; i++)
        if (!(disp[i] > 0.0)) return 3;

    if (argc > 1 && depthac_model_save(m, argv[1]) != ACDK_STATUS_OK) return 4;
    depthac_model_free(m);

    double p[3] = {1, 2, 3}, t[3] = {3, 2, 1}, loss = 0;
    if (depthac_affine_loss(p, t, 3, &loss, NULL) != ACDK_STATUS_OK) return 5;

    AcdkStatus s = depthac_corrupt("no-such-kind", 3, 0, img, 16, 16, 3, img);
    if (s != ACDK_STATUS_INVALID_ARGUMENT || depthac_last_error_message() == NULL) return 6;

    printf("version=%s loss=%.12f\n", depthac_version(), loss);
    return 0;
}
