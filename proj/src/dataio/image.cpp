#include "ctxseg/dataio/image.hpp"

#include <algorithm>

namespace ctxseg {

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Tensor to_tensor(const Image& image) { return Tensor({image.channels, image.height, image.width}, image.data); }

Tensor mask_to_tensor(const Mask& mask) {
    return Tensor({mask.height, mask.width}, std::vector<double>(mask.data.begin(), mask.data.end()));
}

Mask mask_from_probabilities(const Tensor& probs, double threshold) {
    if (probs.rank() != 2) throw ShapeError("expected [h,w] probabilities, got " + shape_to_string(probs.shape()));
    Mask m(probs.dim(0), probs.dim(1));
    auto d = probs.data();
    for (std::size_t i = 0; i < d.size(); ++i) m.data[i] = d[i] >= threshold ? 1 : 0;
    return m;
}

}  // namespace ctxseg
