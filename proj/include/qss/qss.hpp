#pragma once

#include "qss/bytes.hpp"
#include "qss/error.hpp"
#include "qss/field.hpp"
#include "qss/keynet.hpp"
#include "qss/random.hpp"
#include "qss/renewal.hpp"
#include "qss/scenario.hpp"
#include "qss/sim.hpp"
#include "qss/spss.hpp"
#include "qss/stores.hpp"
#include "qss/tpv.hpp"
#include "qss/uhash.hpp"
