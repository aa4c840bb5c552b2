// Umbrella header.
#pragma once

#include "unifluid/backbone.hpp"
#include "unifluid/codec.hpp"
#include "unifluid/core.hpp"
#include "unifluid/data.hpp"
#include "unifluid/eval.hpp"
#include "unifluid/heads.hpp"
#include "unifluid/infer.hpp"
#include "unifluid/io.hpp"
#include "unifluid/runner.hpp"
#include "unifluid/sequence.hpp"
#include "unifluid/training.hpp"
