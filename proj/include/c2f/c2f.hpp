// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef C2F_C2F_HPP_
#define C2F_C2F_HPP_

#include "c2f/checkpoint.hpp"
#include "c2f/coarse.hpp"
#include "c2f/datagen.hpp"
#include "c2f/error.hpp"
#include "c2f/eval.hpp"
#include "c2f/merge.hpp"
#include "c2f/model.hpp"
#include "c2f/optim.hpp"
#include "c2f/params.hpp"
#include "c2f/pipeline.hpp"
#include "c2f/ppo.hpp"
#include "c2f/reward.hpp"
#include "c2f/sampling.hpp"
#include "c2f/sft.hpp"
#include "c2f/tensor.hpp"
#include "c2f/vocab.hpp"

#endif  // C2F_C2F_HPP_
