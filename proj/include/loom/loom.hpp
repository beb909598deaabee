#pragma once

// Dataflow runtime that records sequential code into a DAG of versioned
// operations, executes it race-free on a worker pool, and distributes it
// across ranks declared by scope guards.

#include "bench.hpp"
#include "buffer.hpp"
#include "context.hpp"
#include "dag.hpp"
#include "distribution.hpp"
#include "gemm.hpp"
#include "kernel.hpp"
#include "mapreduce.hpp"
#include "random.hpp"
#include "scheduler.hpp"
#include "sockets.hpp"
#include "store.hpp"
#include "strassen.hpp"
#include "tiled.hpp"
#include "transport.hpp"
#include "types.hpp"
