// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moeplan/dag.hpp"
#include "moeplan/error.hpp"
#include "moeplan/hardware.hpp"
#include "moeplan/memory.hpp"
#include "moeplan/model.hpp"
#include "moeplan/phase.hpp"
#include "moeplan/search.hpp"
#include "moeplan/sim.hpp"
#include "moeplan/traffic.hpp"
