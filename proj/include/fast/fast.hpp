// Copyright 2026 The fastaudio Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Umbrella header for the fastaudio library.

#pragma once

#include "fast/audio.hpp"
#include "fast/checkpoint.hpp"
#include "fast/config.hpp"
#include "fast/errors.hpp"
#include "fast/gradcheck.hpp"
#include "fast/init.hpp"
#include "fast/layers.hpp"
#include "fast/lipschitz.hpp"
#include "fast/mobilevit.hpp"
#include "fast/model.hpp"
#include "fast/ops.hpp"
#include "fast/tensor.hpp"
#include "fast/testkit.hpp"
#include "fast/training.hpp"
