#pragma once

#include "shiftlab/common.hpp"
#include "shiftlab/datagen.hpp"
#include "shiftlab/nn.hpp"
#include "shiftlab/objectives.hpp"
#include "shiftlab/record.hpp"
#include "shiftlab/adapt.hpp"
#include "shiftlab/mea.hpp"
#include "shiftlab/bench.hpp"
