/*
 * Copyright 2026 The adkf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Convenience header pulling in the whole library.

#pragma once

#include "adkf/bayes_opt.hpp"
#include "adkf/core_math.hpp"
#include "adkf/error.hpp"
#include "adkf/evaluation.hpp"
#include "adkf/feature_extractor.hpp"
#include "adkf/gp.hpp"
#include "adkf/hypergradient.hpp"
#include "adkf/inner_solver.hpp"
#include "adkf/kernels.hpp"
#include "adkf/meta_trainer.hpp"
#include "adkf/parallel.hpp"
#include "adkf/random.hpp"
#include "adkf/run_config.hpp"
#include "adkf/task_suite.hpp"
