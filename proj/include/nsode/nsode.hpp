// Umbrella header.
#pragma once

#include "nsode/adjoint.hpp"
#include "nsode/core.hpp"
#include "nsode/field.hpp"
#include "nsode/field_json.hpp"
#include "nsode/flow.hpp"
#include "nsode/loss.hpp"
#include "nsode/min_norm_point.hpp"
#include "nsode/optimizer.hpp"
#include "nsode/selection.hpp"
#include "nsode/sensitivity.hpp"
#include "nsode/verification/oracles.hpp"
#include "nsode/verification/problems.hpp"
#include "nsode/verification/suites.hpp"
