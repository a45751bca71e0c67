// Copyright (c) 2026, The BTIC Authors. All rights reserved.
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

#include <btic/autograd.hpp>
#include <btic/common.hpp>
#include <btic/contrastive.hpp>
#include <btic/corpus.hpp>
#include <btic/encoders.hpp>
#include <btic/export.hpp>
#include <btic/fetch.hpp>
#include <btic/fusion.hpp>
#include <btic/harness.hpp>
#include <btic/image.hpp>
#include <btic/metrics.hpp>
#include <btic/nn.hpp>
#include <btic/projection.hpp>
#include <btic/rundir.hpp>
#include <btic/commands.hpp>
