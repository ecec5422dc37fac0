#include <stdio.h>
#include <stdlib.h>

#include "emb2img.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        Emb2imgStatus s_ = (call);                                           \
        if (s_ != EMB2IMG_STATUS_OK) {                                       \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, emb2img_last_error()); \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(int argc, char **argv) {
    enum { N = 40, D = 24 };
    float values[N * D];
    uint8_t labels[N];
    unsigned state = 12345u;
    for (int i = 0; i < N; i++) {
        labels[i] = (uint8_t)(i % 2);
        for (int j = 0; j < D; j++) {
            state = state * 1103515245u + 12345u;
            float noise = (float)((state >> 8) & 0xffff) / 65536.0f - 0.5f;
            values[i * D + j] = noise + (labels[i] && j < 6 ? 2.0f : 0.0f);
        }
    }

    Emb2imgEmbeddings *emb = NULL;
    Emb2imgLayout *layout = NULL;
    Emb2imgImages *raw = NULL, *norm = NULL;
    CHECK(emb2img_embeddings_new(N, D, values, labels, &emb));

    Emb2imgTsneConfig cfg = emb2img_tsne_config_default();
    cfg.perplexity = 5.0;
    cfg.n_iter = 300;
    CHECK(emb2img_layout_fit(emb, 8, 8, &cfg, &layout));

    uint32_t density[64];
    CHECK(emb2img_layout_density(layout, density, 64));
    unsigned total = 0;
    for (int i = 0; i < 64; i++) total += density[i];
    if (total != D) {
        fprintf(stderr, "density sums to %u\n", total);
        return 1;
    }

    CHECK(emb2img_images_render(emb, layout, &raw));
    CHECK(emb2img_images_normalize(raw, 1e-8f, &norm));
    if (argc > 1) CHECK(emb2img_images_save(norm, argv[1]));

    if (emb2img_embeddings_load("/nonexistent/x.emb1", &emb) != EMB2IMG_STATUS_IO ||
        emb2img_last_error() == NULL) {
        fprintf(stderr, "missing file not reported\n");
        return 1;
    }

    emb2img_images_free(norm);
    emb2img_images_free(raw);
    emb2img_layout_free(layout);
    emb2img_embeddings_free(emb);
    printf("ok %u\n", total);
    return 0;
}
