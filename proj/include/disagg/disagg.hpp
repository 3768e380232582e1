#pragma once

#include "disagg/apm.hpp"
#include "disagg/cuts.hpp"
#include "disagg/linalg.hpp"
#include "disagg/lp.hpp"
#include "disagg/master.hpp"
#include "disagg/matrix.hpp"
#include "disagg/model.hpp"
#include "disagg/polyhedral.hpp"
#include "disagg/projections.hpp"
#include "disagg/protocol.hpp"
#include "disagg/random.hpp"
#include "disagg/smc.hpp"
#include "disagg/spectral.hpp"
