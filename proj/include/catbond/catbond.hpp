#pragma once

// Everything: the five model modules, diagnostics, and the pipeline harness.

#include "catbond/cir.hpp"
#include "catbond/crm.hpp"
#include "catbond/diagnostics.hpp"
#include "catbond/distfit.hpp"
#include "catbond/entropy.hpp"
#include "catbond/harness/pipeline.hpp"
#include "catbond/pricing.hpp"
