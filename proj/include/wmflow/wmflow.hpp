#pragma once

#include "wmflow/error.hpp"
#include "wmflow/mobility.hpp"
#include "wmflow/grid.hpp"
#include "wmflow/functionals.hpp"
#include "wmflow/transport.hpp"
#include "wmflow/jko.hpp"
#include "wmflow/cascade.hpp"
#include "wmflow/oracle.hpp"
#include "wmflow/weak_form.hpp"
#include "wmflow/config.hpp"
#include "wmflow/io.hpp"
#include "wmflow/app.hpp"
