#pragma once

#include "hrapr/errors.hpp"
#include "hrapr/geometry.hpp"
#include "hrapr/embedding.hpp"
#include "hrapr/feature_store.hpp"
#include "hrapr/uncertainty.hpp"
#include "hrapr/query_file.hpp"
#include "hrapr/synthbench.hpp"
#include "hrapr/refinement.hpp"
#include "hrapr/evalharness.hpp"
