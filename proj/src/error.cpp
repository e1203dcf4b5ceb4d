#include "moelab/error.hpp"

namespace moelab {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Input: return "input";
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::Numerical: return "numerical";
        case ErrorKind::Contract: return "contract";
    }
    return "unknown";
}

}  // namespace moelab
