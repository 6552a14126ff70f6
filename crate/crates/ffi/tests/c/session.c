#include <stdio.h>
#include <string.h>

#include "tutor.h"

#define CHECK(cond)                                                    \
    do {                                                               \
        if (!(cond)) {                                                 \
            const char *e = tutor_last_error();                        \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,    \
                    #cond, e ? e : "no error");                        \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 4) {
        fprintf(stderr, "usage: %s CONFIG SCRIPT LOG_DIR\n", argv[0]);
        return 2;
    }
    TutorSession *s = NULL;
    CHECK(tutor_session_new(argv[1], argv[2], argv[3], &s) == TUTOR_STATUS_OK);

    char *reply = NULL;
    CHECK(tutor_session_start(s, &reply) == TUTOR_STATUS_OK);
    CHECK(reply != NULL);
    printf("Tutor: %s\n", reply);
    tutor_string_free(reply);

    CHECK(tutor_session_input(s, "Hi! I'm Mia from Madrid.", &reply) == TUTOR_STATUS_OK);
    tutor_string_free(reply);
    CHECK(tutor_session_input(s, "/switch", NULL) == TUTOR_STATUS_PROTOCOL);

    TutorPhase phase;
    CHECK(tutor_session_phase(s, &phase) == TUTOR_STATUS_OK);
    CHECK(phase == TUTOR_PHASE_INTRODUCTION);
    CHECK(tutor_session_input(s, "/end", NULL) == TUTOR_STATUS_OK);
    CHECK(tutor_session_phase(s, &phase) == TUTOR_STATUS_OK);
    CHECK(phase == TUTOR_PHASE_ENDED);

    size_t turns = 0;
    CHECK(tutor_session_turn_count(s, &turns) == TUTOR_STATUS_OK);
    printf("turns: %zu\n", turns);
    tutor_session_free(s);

    TutorCefrLevel level;
    CHECK(tutor_parse_cefr("Level: B1", &level) == TUTOR_STATUS_OK && level == TUTOR_CEFR_LEVEL_B1);

    unsigned char buf[64];
    size_t len = 0;
    CHECK(tutor_osc_encode_float("/avatar/parameters/Joy", 1.0f, buf, sizeof buf, &len) == TUTOR_STATUS_OK);
    CHECK(len == 32 && memcmp(buf, "/avatar/parameters/Joy\0\0,f\0\0", 28) == 0);
    return 0;
}
