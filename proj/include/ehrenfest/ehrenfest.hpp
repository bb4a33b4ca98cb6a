// SPDX-License-Identifier: Apache-2.0
#pragma once

// Library umbrella header. The CLI front end (cli.hpp) is not included.

#include "ehrenfest/datastats.hpp"
#include "ehrenfest/dynamics.hpp"
#include "ehrenfest/error.hpp"
#include "ehrenfest/io.hpp"
#include "ehrenfest/landscape.hpp"
#include "ehrenfest/optimize.hpp"
#include "ehrenfest/oracle.hpp"
#include "ehrenfest/sweep.hpp"
#include "ehrenfest/version.hpp"
