#pragma once

#include "hcpf/compound.hpp"
#include "hcpf/data.hpp"
#include "hcpf/edm.hpp"
#include "hcpf/error.hpp"
#include "hcpf/eval.hpp"
#include "hcpf/model.hpp"
#include "hcpf/special.hpp"
#include "hcpf/svi.hpp"
