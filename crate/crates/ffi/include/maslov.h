/* C ABI for the maslov library.
 *
 * Status codes mirror the CLI exit statuses: 0 ok, 2 configuration error,
 * 3 invariant violation (run completed, an identity check failed; the
 * report handle is still returned), 4 resolution failure, 1 other.
 *
 * Reports are opaque handles; release them with maslov_report_free.
 * Strings returned by accessor functions are owned by the report (or by
 * thread-local storage for maslov_last_error) and must not be freed.
 */

#ifndef MASLOV_H
#define MASLOV_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum MaslovStatus {
  MASLOV_OK = 0,
  MASLOV_ERROR = 1,
  MASLOV_CONFIG_ERROR = 2,
  MASLOV_INVARIANT_VIOLATION = 3,
  MASLOV_RESOLUTION_FAILURE = 4,
} MaslovStatus;

typedef struct MaslovReport MaslovReport;

/* Run the analyses described by a TOML configuration string.
 * On MASLOV_OK and MASLOV_INVARIANT_VIOLATION, *out_report receives an
 * owned handle. */
MaslovStatus maslov_run_toml(const char *config_toml, MaslovReport **out_report);

/* Run the analyses described by a TOML configuration file. */
MaslovStatus maslov_run_file(const char *path, MaslovReport **out_report);

/* Structured JSON rendering of the report; owned by the report. */
const char *maslov_report_json(const MaslovReport *report);

/* Human-readable rendering of the report; owned by the report. */
const char *maslov_report_text(const MaslovReport *report);

/* 1 when every computed identity held, 0 otherwise. */
int maslov_report_identities_hold(const MaslovReport *report);

/* Release a report handle. */
void maslov_report_free(MaslovReport *report);

/* Message of the most recent error on the calling thread. */
const char *maslov_last_error(void);

/* Library version string. */
const char *maslov_version(void);

#ifdef __cplusplus
}
#endif

#endif /* MASLOV_H */
