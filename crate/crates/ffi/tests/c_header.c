/* Compile-only check that the generated header is usable from C and C++. */
#include <math.h>
#include <stdio.h>

#include "cvs.h"

int roundtrip(const char *in_path, const char *out_path) {
    CvsSequence *seq = NULL;
    CvsMeasurements *meas = NULL;
    CvsDecoded *dec = NULL;
    CvsEncodeParams ep;
    CvsDecodeOptions opts;
    double psnr = 0.0, ssim = 0.0;
    size_t rows = 0, cols = 0, frames = 0;

    if (cvs_sequence_load(in_path, &seq) != CVS_STATUS_OK) {
        fprintf(stderr, "%s\n", cvs_last_error_message());
        return 1;
    }
    cvs_sequence_dims(seq, &rows, &cols, &frames);
    cvs_encode_params_default(&ep);
    ep.mr_nonkey = 0.2;
    cvs_encode(seq, &ep, &meas);
    cvs_decode_options_default(&opts);
    opts.mode = CVS_DECODE_MODE_INITIALIZER_ONLY;
    opts.method = CVS_DICT_METHOD_MOD;
    if (cvs_decode(meas, &opts, seq, &dec) == CVS_STATUS_OK) {
        cvs_decoded_mean_quality(dec, &psnr, &ssim);
        cvs_decoded_write_csv(dec, out_path);
    }
    cvs_decoded_free(dec);
    cvs_measurements_free(meas);
    cvs_sequence_free(seq);
    return isfinite(psnr) ? 0 : 2;
}

double block_energy(void) {
    CvsSensing *phi = NULL;
    size_t m = 0, n = 0;
    double x[64] = {1.0}, y[64], back[64];
    cvs_sensing_new(1, 0.5, 8, &phi);
    cvs_sensing_shape(phi, &m, &n);
    cvs_sensing_forward(phi, x, n, y, m);
    cvs_sensing_adjoint(phi, y, m, back, n);
    cvs_sensing_free(phi);
    return back[0];
}
