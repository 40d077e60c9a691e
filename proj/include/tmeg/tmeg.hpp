#pragma once

#include "tmeg/autodiff.hpp"
#include "tmeg/checkpoint.hpp"
#include "tmeg/code_grid.hpp"
#include "tmeg/common.hpp"
#include "tmeg/corpus_io.hpp"
#include "tmeg/dense_array.hpp"
#include "tmeg/geometry.hpp"
#include "tmeg/gradcheck.hpp"
#include "tmeg/graph.hpp"
#include "tmeg/model.hpp"
#include "tmeg/model_config.hpp"
#include "tmeg/params.hpp"
#include "tmeg/pmd.hpp"
#include "tmeg/synthetic.hpp"
#include "tmeg/tasks.hpp"
#include "tmeg/train.hpp"
