#pragma once

#include "comac/nn.hpp"

#include <string_view>

namespace comac {

enum class Modality { two_d, three_d };

inline constexpr std::string_view modality_name(Modality m) {
    return m == Modality::two_d ? "2d" : "3d";
}

/// Fast student and slow EMA teacher for one modality.
struct ModelPair {
    nn::Network student;
    nn::Network teacher;
    Modality modality = Modality::two_d;

    /// Teacher starts as an exact copy of the student.
    static ModelPair from_student(nn::Network student, Modality m) {
        ModelPair p{student, student, m};
        return p;
    }
};

}  // namespace comac
