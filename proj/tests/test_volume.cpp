#include <catch2/catch_amalgamated.hpp>

#include <hybridreg/types.hpp>

#include <cmath>
#include <vector>

using namespace hybridreg;
using Catch::Approx;

TEST_CASE("linear_index is x-fastest") {
    Dim3 d{4, 3, 5};
    CHECK(linear_index(d, 0, 0, 0) == 0);
    CHECK(linear_index(d, 1, 0, 0) == 1);
    CHECK(linear_index(d, 0, 1, 0) == 4);
    CHECK(linear_index(d, 0, 0, 1) == 12);
    // independent recomputation for a scattered set of coordinates
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x)
                CHECK(linear_index(d, x, y, z) ==
                      static_cast<std::size_t>(x) + 4u * (static_cast<std::size_t>(y) + 3u * z));
}

TEST_CASE("half_dims rounds up") {
    CHECK(half_dims({5, 4, 1}) == Dim3{3, 2, 1});
    CHECK(half_dims({2, 2, 2}) == Dim3{1, 1, 1});
    CHECK(half_dims({7, 8, 9}) == Dim3{4, 4, 5});
    CHECK(half_dims({1, 1, 1}) == Dim3{1, 1, 1});
}

TEST_CASE("new_volume validates input") {
    SECTION("size mismatch") {
        CHECK_THROWS_AS(new_volume({2, 2, 2}, {1, 1, 1}, std::vector<double>(7)), contract_error);
    }
    SECTION("nonpositive dims") {
        CHECK_THROWS_AS(new_volume({0, 2, 2}, {1, 1, 1}), contract_error);
        CHECK_THROWS_AS(new_volume({2, -1, 2}, {1, 1, 1}), contract_error);
    }
    SECTION("nonpositive spacing") {
        CHECK_THROWS_AS(new_volume({2, 2, 2}, {1, 0, 1}), contract_error);
        CHECK_THROWS_AS(new_volume({2, 2, 2}, {1, 1, -2}), contract_error);
    }
    SECTION("non-finite values") {
        std::vector<double> bad(8, 0.0);
        bad[3] = std::nan("");
        CHECK_THROWS_AS(new_volume({2, 2, 2}, {1, 1, 1}, bad), contract_error);
    }
    SECTION("range cached on construction") {
        Volume v = new_volume({2, 2, 1}, {1, 1, 1}, {0.5, -2.0, 3.0, 1.0});
        CHECK(v.min_value == -2.0);
        CHECK(v.max_value == 3.0);
        CHECK(v.at(1, 0, 0) == -2.0);
        CHECK(v.at(0, 1, 0) == 3.0);
    }
    SECTION("zero-initialized overload") {
        Volume v = new_volume({3, 2, 2}, {1, 2, 1.5});
        CHECK(v.data.size() == 12);
        for (double x : v.data) CHECK(x == 0.0);
        CHECK(v.spacing[1] == 2.0);
    }
}

TEST_CASE("normalize_intensities maps range to unit interval") {
    Volume v = new_volume({2, 2, 1}, {1, 1, 1}, {2.0, 4.0, 6.0, 3.0});
    Volume n = normalize_intensities(v);
    CHECK(n.data[0] == Approx(0.0));
    CHECK(n.data[1] == Approx(0.5));
    CHECK(n.data[2] == Approx(1.0));
    CHECK(n.data[3] == Approx(0.25));
    CHECK(n.min_value == 0.0);
    CHECK(n.max_value == 1.0);

    SECTION("constant volume maps to zeros") {
        Volume c = new_volume({2, 2, 2}, {1, 1, 1}, std::vector<double>(8, 5.0));
        Volume nc = normalize_intensities(c);
        for (double x : nc.data) CHECK(x == 0.0);
        CHECK(nc.max_value == 0.0);
    }
}

TEST_CASE("label maps reject invalid labels") {
    CHECK_THROWS_AS(new_label_map({2, 2, 1}, {1, 1, 1}, {0, 1, -1, 2}), contract_error);
    LabelMap m = new_label_map({2, 2, 1}, {1, 1, 1}, {0, 1, 3, 2});
    CHECK(max_label(m) == 3);
    LabelMap e = new_label_map({2, 1, 1}, {1, 1, 1}, {0, 0});
    CHECK(max_label(e) == 0);
}

TEST_CASE("volume and label map conversion round trips") {
    LabelMap m = new_label_map({2, 2, 1}, {1, 1, 1}, {0, 2, 1, 2});
    Volume v = to_volume(m);
    CHECK(v.data[1] == 2.0);
    LabelMap back = to_label_map(v);
    CHECK(back.data == m.data);

    SECTION("non-integral values rejected") {
        Volume bad = new_volume({2, 1, 1}, {1, 1, 1}, {0.0, 1.4});
        CHECK_THROWS_AS(to_label_map(bad), contract_error);
    }
    SECTION("near-integral values snap within tolerance") {
        Volume close = new_volume({2, 1, 1}, {1, 1, 1}, {1.0004, 1.9996});
        LabelMap snapped = to_label_map(close);
        CHECK(snapped.data == std::vector<int>{1, 2});
    }
    SECTION("negative values rejected") {
        Volume neg = new_volume({2, 1, 1}, {1, 1, 1}, {0.0, -1.0});
        CHECK_THROWS_AS(to_label_map(neg), contract_error);
    }
}

TEST_CASE("one_hot encodes channel-major with unit sums") {
    LabelMap m = new_label_map({2, 2, 1}, {1, 1, 1}, {0, 2, 1, 0});
    SoftLabelVolume s = one_hot(m, 3);
    CHECK(s.num_classes == 3);
    CHECK(s.data.size() == 12);
    // channel c of voxel i lives at c * nvox + i
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(s.data[static_cast<std::size_t>(c) * 4 + i] ==
                  (m.data[i] == c ? 1.0 : 0.0));
    CHECK_NOTHROW(check_soft_sums(s));
    CHECK(s.at(2, 1, 0, 0) == 1.0);
    CHECK(s.at(0, 1, 0, 0) == 0.0);

    SECTION("too few classes rejected") {
        CHECK_THROWS_AS(one_hot(m, 2), contract_error);
    }
}

TEST_CASE("check_soft_sums flags broken partitions") {
    LabelMap m = new_label_map({2, 1, 1}, {1, 1, 1}, {0, 1});
    SoftLabelVolume s = one_hot(m, 2);
    s.data[0] = 0.7;
    CHECK_THROWS_AS(check_soft_sums(s), contract_error);
}

TEST_CASE("zero_field starts at rest and validates") {
    DisplacementField f = zero_field({3, 4, 2}, {1, 1, 1}, GridLevel::Half);
    CHECK(f.level == GridLevel::Half);
    for (const auto& comp : f.comp) {
        CHECK(comp.size() == 24);
        for (double v : comp) CHECK(v == 0.0);
    }
    CHECK_NOTHROW(check_field(f, "test"));
    f.comp[1].resize(23);
    CHECK_THROWS_AS(check_field(f, "test"), contract_error);
}

TEST_CASE("same_spacing uses relative tolerance") {
    CHECK(same_spacing({1, 1, 1}, {1, 1, 1}));
    CHECK(same_spacing({2, 2, 2}, {2.0000001, 2, 2}));
    CHECK_FALSE(same_spacing({1, 1, 1}, {1.01, 1, 1}));
}
