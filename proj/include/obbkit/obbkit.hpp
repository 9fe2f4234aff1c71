// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "obbkit/cascade.hpp"
#include "obbkit/data_io.hpp"
#include "obbkit/errors.hpp"
#include "obbkit/eval.hpp"
#include "obbkit/geometry.hpp"
#include "obbkit/nms.hpp"
#include "obbkit/parallel.hpp"
#include "obbkit/random.hpp"
#include "obbkit/relation_graph.hpp"
#include "obbkit/sgcm.hpp"
#include "obbkit/synth.hpp"
#include "obbkit/weights_io.hpp"
