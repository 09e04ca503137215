#include <math.h>
#include <stdio.h>
#include <string.h>

#include "hatpic.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(void) {
    uint16_t crc = 0;
    CHECK(hatpic_crc16((const uint8_t *)"123456789", 9, &crc) == HATPIC_STATUS_OK);
    CHECK(crc == 0x29B1);

    uint8_t buf[HATPIC_MAX_FRAME];
    size_t n = 0;
    CHECK(hatpic_encode_feedback(5, -0.3, buf, sizeof buf, &n) == HATPIC_STATUS_OK);
    CHECK(n == 12);

    HatpicParser *p = NULL;
    CHECK(hatpic_parser_new(&p) == HATPIC_STATUS_OK);
    size_t pending = 0;
    CHECK(hatpic_parser_feed(p, buf, n, &pending) == HATPIC_STATUS_OK);
    CHECK(pending == 1);
    HatpicFrame f;
    CHECK(hatpic_parser_next(p, &f) == HATPIC_STATUS_OK);
    CHECK(f.seq == 5 && f.payload_len == 4);
    double tau = 0;
    CHECK(hatpic_decode_feedback(&f, &tau) == HATPIC_STATUS_OK);
    CHECK(tau == -0.3);
    CHECK(hatpic_parser_next(p, &f) == HATPIC_STATUS_EMPTY);
    hatpic_parser_free(p);

    HatpicControllerConfig cfg;
    CHECK(hatpic_controller_default_config(&cfg) == HATPIC_STATUS_OK);
    HatpicController *c = NULL;
    CHECK(hatpic_controller_new(&cfg, &c) == HATPIC_STATUS_OK);
    HatpicTick t;
    for (int i = 0; i < 5000; i++) {
        CHECK(hatpic_controller_tick(c, 0.2, &t) == HATPIC_STATUS_OK);
    }
    CHECK(fabs(t.state.theta - 0.2 / cfg.k_max) < 1e-3);
    hatpic_controller_free(c);

    cfg.m_adm = 0;
    CHECK(hatpic_controller_new(&cfg, &c) == HATPIC_STATUS_INVALID_ARGUMENT);
    char msg[128];
    CHECK(hatpic_last_error(msg, sizeof msg) > 0);
    CHECK(strstr(msg, "m_adm") != NULL);

    puts("c smoke ok");
    return 0;
}
