#pragma once

#include "bcosgnn/error.hpp"
#include "bcosgnn/linalg.hpp"
#include "bcosgnn/bcos.hpp"
#include "bcosgnn/json_io.hpp"
#include "bcosgnn/graph.hpp"
#include "bcosgnn/model.hpp"
#include "bcosgnn/explain.hpp"
#include "bcosgnn/data.hpp"
#include "bcosgnn/eval.hpp"
#include "bcosgnn/parallel.hpp"
#include "bcosgnn/train.hpp"
