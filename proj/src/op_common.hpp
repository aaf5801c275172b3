#pragma once

#include <initializer_list>

#include "cbstm/autograd.hpp"

namespace cbstm::detail {

inline Tape& same_tape(std::initializer_list<Value> operands) {
    Tape* tape = nullptr;
    for (const Value& v : operands) {
        if (!v.valid()) throw ArgumentError("operation received an invalid Value");
        if (tape == nullptr) tape = v.tape;
        if (v.tape != tape) throw ArgumentError("operands recorded on different tapes");
    }
    return *tape;
}

}  // namespace cbstm::detail
