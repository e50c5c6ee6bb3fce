// Umbrella header: the whole library in one include.
#pragma once

#include "regunet/matrix.hpp"
#include "regunet/layers.hpp"
#include "regunet/objective.hpp"
#include "regunet/optim.hpp"
#include "regunet/model.hpp"
#include "regunet/data.hpp"
#include "regunet/textio.hpp"
#include "regunet/checkpoint.hpp"
#include "regunet/train.hpp"
