/* Copyright 2026 The melvec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Umbrella header.

#ifndef MELVEC_MELVEC_HPP_
#define MELVEC_MELVEC_HPP_

#include "melvec/audio.hpp"
#include "melvec/checkpoint.hpp"
#include "melvec/common.hpp"
#include "melvec/config.hpp"
#include "melvec/data.hpp"
#include "melvec/features.hpp"
#include "melvec/lid.hpp"
#include "melvec/losses.hpp"
#include "melvec/model.hpp"
#include "melvec/ops.hpp"
#include "melvec/optim.hpp"
#include "melvec/quantizer.hpp"
#include "melvec/tensor.hpp"
#include "melvec/train.hpp"
#include "melvec/wav2vec.hpp"

#endif  // MELVEC_MELVEC_HPP_
