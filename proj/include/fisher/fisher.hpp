#pragma once

#include "market.hpp"
#include "demand.hpp"
#include "duality.hpp"
#include "tatonnement.hpp"
#include "verification.hpp"
