// Single translation unit pulling in every public header, so the library
// compiles standalone and include ordering stays honest.

#include "gkpsense/backaction.hpp"
#include "gkpsense/bounds.hpp"
#include "gkpsense/config.hpp"
#include "gkpsense/errors.hpp"
#include "gkpsense/estimation.hpp"
#include "gkpsense/fock.hpp"
#include "gkpsense/io.hpp"
#include "gkpsense/noise.hpp"
#include "gkpsense/rng.hpp"
#include "gkpsense/runner.hpp"
#include "gkpsense/sbs.hpp"

namespace gkpsense {

// Anchor symbol so the archive is never empty.
const char* library_name() { return "gkpsense"; }

}  // namespace gkpsense
