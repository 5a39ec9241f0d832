// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef PCEE_PCEE_HPP_
#define PCEE_PCEE_HPP_

#include "pcee/calib.hpp"
#include "pcee/eval.hpp"
#include "pcee/io.hpp"
#include "pcee/policy.hpp"
#include "pcee/rng.hpp"
#include "pcee/synth.hpp"
#include "pcee/trace.hpp"

#endif  // PCEE_PCEE_HPP_
