#include <pybind11/pybind11.h>

#include "mvscale/version.hpp"

namespace py = pybind11;

PYBIND11_MODULE(_mvscale, m) {
    m.doc() = "Slow-fast mean-field SDE simulation and verification toolkit";
    m.attr("__version__") = mvscale::kVersion;
}
