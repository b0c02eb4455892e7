#pragma once

#include "als.hpp"
#include "assignment.hpp"
#include "compress.hpp"
#include "coupling.hpp"
#include "crb.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "kernel.hpp"
#include "linalg.hpp"
#include "mu.hpp"
#include "rng.hpp"
#include "sylvester.hpp"
#include "tensor.hpp"
