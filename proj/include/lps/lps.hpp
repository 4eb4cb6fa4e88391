#pragma once

#include "lps/common.hpp"
#include "lps/config.hpp"
#include "lps/dataset.hpp"
#include "lps/harness.hpp"
#include "lps/model.hpp"
#include "lps/poisoning.hpp"
#include "lps/selection.hpp"
#include "lps/trigger.hpp"
