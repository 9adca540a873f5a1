#include <doctest.h>

#include "mseg/arch.hpp"
#include "mseg/network.hpp"

using namespace mseg;

namespace {

LayerDesc conv(std::size_t kernel, std::size_t maps = 8, std::size_t stride = 1) {
    LayerDesc l;
    l.kind = LayerKind::Conv;
    l.kernel = kernel;
    l.maps = maps;
    l.stride = stride;
    return l;
}

LayerDesc pool(std::size_t window) {
    LayerDesc l;
    l.kind = LayerKind::Pool;
    l.window = window;
    return l;
}

LayerDesc upsample(std::size_t factor) {
    LayerDesc l;
    l.kind = LayerKind::Upsample;
    l.factor = factor;
    return l;
}

ArchitectureSpec spec_of(std::vector<LayerDesc> layers, std::size_t dims = 2) {
    ArchitectureSpec s;
    s.dims = dims;
    s.layers = std::move(layers);
    return s;
}

}  // namespace

TEST_CASE("receptive field of hand-derived chains") {
    // single 3x3 conv
    CHECK(receptive_field(spec_of({conv(3)})) == std::vector<std::size_t>{3, 3});
    // conv3 -> pool2 -> conv3: 3 -> 4 -> 8
    CHECK(receptive_field(spec_of({conv(3), pool(2), conv(3)})) ==
          std::vector<std::size_t>{8, 8});
    // conv5: 5
    CHECK(receptive_field(spec_of({conv(5)}, 3)) == std::vector<std::size_t>{5, 5, 5});
    // conv3 -> conv3: 5
    CHECK(receptive_field(spec_of({conv(3), conv(3)})) == std::vector<std::size_t>{5, 5});
    // strided conv3 (stride 2) -> conv3: 3 + 2*2 = 7
    CHECK(receptive_field(spec_of({conv(3, 8, 2), conv(3)})) == std::vector<std::size_t>{7, 7});
    // conv3 -> pool2 -> conv3 -> up2 -> conv3: 8 then jump back to 1 -> 10
    CHECK(receptive_field(spec_of({conv(3), pool(2), conv(3), upsample(2), conv(3)})) ==
          std::vector<std::size_t>{10, 10});
}

TEST_CASE("adding any conv with kernel > 1 strictly increases the receptive field") {
    std::vector<LayerDesc> base{conv(3), pool(2), conv(3)};
    for (std::size_t k : {2, 3, 5, 7}) {
        auto grown = base;
        grown.push_back(conv(k));
        CHECK(receptive_field(spec_of(grown))[0] > receptive_field(spec_of(base))[0]);
    }
}

TEST_CASE("shipped full-scale 3D trunk reports exactly 45 per axis") {
    ModelConfig cfg = load_model_config(SOURCE_DIR "/configs/3d_full_scale.json");
    CHECK(receptive_field(cfg.trunk) == std::vector<std::size_t>{45, 45, 45});
}

TEST_CASE("validation rejects malformed stacks") {
    // classify not last
    ArchitectureSpec s = spec_of({conv(3)});
    LayerDesc cl;
    cl.kind = LayerKind::Classify;
    cl.kernel = 1;
    s.layers.insert(s.layers.begin(), cl);
    CHECK_THROWS_AS(s.validate(true), std::invalid_argument);

    // concat across scales
    LayerDesc cat;
    cat.kind = LayerKind::Concat;
    cat.concat_with = 0;
    ArchitectureSpec c = spec_of({conv(3), pool(2), cat});
    CHECK_THROWS_AS(c.validate(false), std::invalid_argument);

    // missing classify when required
    CHECK_THROWS_AS(spec_of({conv(3)}).validate(true), std::invalid_argument);
    CHECK_NOTHROW(spec_of({conv(3)}).validate(false));
}

TEST_CASE("JSON round trip: parse_architecture fills defaults") {
    ArchitectureSpec s = parse_architecture(R"({
        "dims": 2,
        "layers": [
            {"kind": "conv", "maps": 8},
            {"kind": "pool"},
            {"kind": "conv", "maps": 8, "kernel": 5},
            {"kind": "classify"}
        ]})");
    CHECK(s.layers.size() == 4);
    CHECK(s.layers[0].kernel == 3);
    CHECK(s.layers[1].window == 2);
    CHECK(s.layers[2].kernel == 5);
    CHECK(s.layers[3].kind == LayerKind::Classify);
    CHECK(s.layers[3].kernel == 1);
    CHECK_THROWS_AS(parse_architecture(R"({"layers":[{"kind":"wibble"}]})"),
                    std::invalid_argument);
}
