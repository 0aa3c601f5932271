#pragma once

#include "pdnforge/surrogate/checkpoint.hpp"
#include "pdnforge/surrogate/config.hpp"
#include "pdnforge/surrogate/model.hpp"
#include "pdnforge/surrogate/train.hpp"
