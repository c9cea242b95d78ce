#pragma once

// Umbrella header. png.hpp (libpng) and protocol.hpp (POSIX, nlohmann/json)
// are not included here; include them explicitly when needed.

#include "dclose/config.hpp"
#include "dclose/core.hpp"
#include "dclose/detector.hpp"
#include "dclose/drise.hpp"
#include "dclose/io.hpp"
#include "dclose/maskgen.hpp"
#include "dclose/metrics.hpp"
#include "dclose/render.hpp"
#include "dclose/report.hpp"
#include "dclose/rng.hpp"
#include "dclose/saliency.hpp"
#include "dclose/segmentation.hpp"
#include "dclose/synthetic.hpp"
