#pragma once

#include "veritree/errors.hpp"
#include "veritree/core.hpp"
#include "veritree/action_grammar.hpp"
#include "veritree/digest.hpp"
#include "veritree/reasoner.hpp"
#include "veritree/toolkit.hpp"
#include "veritree/decision.hpp"
#include "veritree/search.hpp"
#include "veritree/selector.hpp"
#include "veritree/bench.hpp"
#include "veritree/profile.hpp"
