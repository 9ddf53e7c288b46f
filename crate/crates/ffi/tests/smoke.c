#include <stdio.h>
#include <string.h>
#include "pshe.h"

int main(void) {
    PsheKernels *k = NULL;
    if (pshe_kernels_new(2, &k) != PSHE_STATUS_INVALID_ARGUMENT) return 1;
    char msg[256];
    size_t needed = 0;
    if (pshe_last_error(msg, sizeof msg, &needed) != PSHE_STATUS_OK || strstr(msg, "d >= 3") == NULL) return 2;
    if (pshe_kernels_new(3, &k) != PSHE_STATUS_OK) return 3;
    double v0 = 0.0;
    pshe_kernels_radial(k, 1, 0.0, &v0);
    pshe_kernels_free(k);
    if (v0 < 3.95 || v0 > 3.96) return 4;

    PshePolymer *p = NULL;
    double h[1] = {1.0};
    double s[3] = {0.0, 0.0, 0.0};
    if (pshe_polymer_new(3, 0.2, 0.0625, 8, h, 1, s, 1, PSHE_BACKEND_GRAM, 1, &p) != PSHE_STATUS_OK) return 5;
    double z = 0.0;
    if (pshe_polymer_sample(p, 0, &z, 1) != PSHE_STATUS_OK || !(z > 0.0)) return 6;
    pshe_polymer_free(p);
    printf("pshe %s ok\n", pshe_version());
    return 0;
}
