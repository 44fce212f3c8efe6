// Copyright 2026 The StyleSeg Authors. All Rights Reserved.
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

#pragma once

#include <functional>

#include "styleseg/tensor.hpp"

namespace styleseg {

// Worker count: hardware concurrency, capped by STYLESEG_THREADS when set.
int worker_limit();

// Runs fn(i) for i in [0, n) on up to `threads` threads. Iterations must be
// independent. The first exception thrown by any iteration is rethrown.
void parallel_for(Index n, int threads, const std::function<void(Index)>& fn);

// Keeps freed activation buffers in the heap instead of returning them to
// the kernel after every step. No-op outside glibc.
void retain_heap_memory();

}  // namespace styleseg
