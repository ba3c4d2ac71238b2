#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"

using namespace sbir;
namespace fs = std::filesystem;

namespace {

StrokeSequence seq(std::vector<StrokePoint> p) { return StrokeSequence(std::move(p)); }

LabeledPair pair_with(std::vector<StrokePoint> p) { return {"x", RasterImage(4, 4), seq(std::move(p))}; }

StrokeSequence random_sketch(Rng& rng, int n) {
  std::vector<StrokePoint> pts;
  for (int i = 0; i < n; ++i) {
    Pen pen = i + 1 == n ? Pen::end : (bernoulli(rng, 0.2) ? Pen::lift : Pen::down);
    pts.push_back({normal(rng, 0, 5), normal(rng, 0, 5), pen});
  }
  return seq(std::move(pts));
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sbir_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(StrokeSequence, RejectsInvalidInput) {
  EXPECT_THROW(seq({}), SketchError);
  EXPECT_THROW(seq({{0, 0, Pen::end}, {1, 1, Pen::down}}), SketchError);
  EXPECT_THROW(StrokeSequence({{0, 0, Pen::down}, {0, 0, Pen::down}}, 1), SketchError);
  EXPECT_THROW(pen_from_one_hot(1, 1, 0), SketchError);
  EXPECT_EQ(pen_from_one_hot(0, 0, 1), Pen::end);
}

TEST(NormalizeOffsets, SquareCorpusHasScaleRootTwo) {
  auto [out, scale] = normalize_offsets({pair_with({{2, 0, Pen::down}, {0, 2, Pen::down}, {-2, 0, Pen::down}, {0, -2, Pen::end}})});
  EXPECT_NEAR(scale, std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(out[0].sketch[0].dx, 2.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(out[0].sketch[3].dy, -2.0 / std::sqrt(2.0), 1e-12);
}

TEST(NormalizeOffsets, UnitStdIsIdentity) {
  // Values {1, -1, 1, -1}: mean 0, population std 1.
  auto in = pair_with({{1, -1, Pen::down}, {1, -1, Pen::end}});
  auto [out, scale] = normalize_offsets({in});
  EXPECT_DOUBLE_EQ(scale, 1.0);
  EXPECT_EQ(out[0].sketch, in.sketch);
}

TEST(NormalizeOffsets, SinglePoint) {
  auto [out, scale] = normalize_offsets({pair_with({{3, 4, Pen::end}})});
  EXPECT_NEAR(scale, 0.5, 1e-12);  // population std of {3, 4}
  EXPECT_NEAR(out[0].sketch[0].dx, 6.0, 1e-12);
  EXPECT_NEAR(out[0].sketch[0].dy, 8.0, 1e-12);
}

TEST(NormalizeOffsets, ErrorsAndInversion) {
  EXPECT_THROW(normalize_offsets({pair_with({{0, 0, Pen::down}, {0, 0, Pen::end}})}), CorpusError);
  EXPECT_THROW(normalize_offsets({}), CorpusError);
  Rng rng(3);
  std::vector<LabeledPair> in;
  for (int i = 0; i < 5; ++i) in.push_back({"s", RasterImage(2, 2), random_sketch(rng, 7)});
  auto [out, scale] = normalize_offsets(in);
  for (std::size_t i = 0; i < in.size(); ++i)
    for (std::size_t t = 0; t < in[i].sketch.size(); ++t) {
      EXPECT_LE(oracle::rel_err(out[i].sketch[t].dx * scale, in[i].sketch[t].dx, 1e-300), 1e-12);
      EXPECT_LE(oracle::rel_err(out[i].sketch[t].dy * scale, in[i].sketch[t].dy, 1e-300), 1e-12);
    }
}

TEST(ToAbsolute, Examples) {
  EXPECT_EQ(to_absolute(seq({{1, 0, Pen::down}, {0, 1, Pen::down}})), (std::vector<Point2>{{1, 0}, {1, 1}}));
  EXPECT_EQ(to_absolute(seq({{0, 0, Pen::end}})), (std::vector<Point2>{{0, 0}}));
  EXPECT_EQ(to_absolute(seq({{2, 3, Pen::down}, {-2, -3, Pen::end}})), (std::vector<Point2>{{2, 3}, {0, 0}}));
}

TEST(ToAbsolute, RoundTripWithOffsetEncoding) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point2> coords;
    std::vector<Pen> pens;
    const int n = uniform_int(rng, 1, 30);
    for (int i = 0; i < n; ++i) {
      coords.push_back({normal(rng, 0, 50), normal(rng, 0, 50)});
      pens.push_back(i + 1 == n ? Pen::end : Pen::down);
    }
    const auto back = to_absolute(from_absolute(coords, pens));
    for (int i = 0; i < n; ++i) {
      EXPECT_NEAR(back[i].x, coords[i].x, 1e-12 * std::max(1.0, std::abs(coords[i].x)) * n);
      EXPECT_NEAR(back[i].y, coords[i].y, 1e-12 * std::max(1.0, std::abs(coords[i].y)) * n);
    }
  }
}

TEST(Rasterize, LShapeMatchesHandDerivedPixels) {
  // Polyline (0,0) -> (0,4) -> (4,4); bbox 4x4 maps onto [1, 6] at scale 5/4.
  const auto img = rasterize(seq({{0, 4, Pen::down}, {4, 0, Pen::end}}), 8, 8, 1);
  std::set<std::pair<int, int>> want;
  for (int y = 1; y <= 6; ++y) want.insert({1, y});
  for (int x = 1; x <= 6; ++x) want.insert({x, 6});
  EXPECT_EQ(oracle::lit(img), want);
  EXPECT_EQ(oracle::line_pixels(1, 1, 1, 6).size() + oracle::line_pixels(1, 6, 6, 6).size() - 1, want.size());
}

TEST(Rasterize, ChannelsIdenticalAndBinary) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto img = rasterize(random_sketch(rng, 15), 32, 32, 2);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const float v = img.at(0, y, x);
        EXPECT_TRUE(v == 0.0f || v == 1.0f);
        EXPECT_EQ(v, img.at(1, y, x));
        EXPECT_EQ(v, img.at(2, y, x));
      }
  }
}

TEST(Rasterize, AntialiasStaysInUnitInterval) {
  Rng rng(6);
  RasterOptions ro{32, 32, 2, true};
  const auto img = rasterize(random_sketch(rng, 15), ro);
  for (float v : img.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Rasterize, TranslationInvariantAndDeterministic) {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const auto s = random_sketch(rng, 12);
    // The start token moves with everything else.
    std::vector<PenPoint> poly = absolute_polyline(s);
    for (auto& p : poly) p.pos = {p.pos.x + 17.25, p.pos.y - 3.5};
    EXPECT_EQ(rasterize_polyline(poly, {64, 64, 2, false}), rasterize(s, 64, 64, 2));
    EXPECT_EQ(rasterize(s, 64, 64, 2), rasterize(s, 64, 64, 2));
  }
}

TEST(Rasterize, DegenerateAndErrors) {
  const auto img = rasterize(seq({{0, 0, Pen::end}}), 9, 9, 1);
  EXPECT_EQ(oracle::lit(img), (std::set<std::pair<int, int>>{{4, 4}}));
  EXPECT_THROW(rasterize(seq({{1, 1, Pen::end}}), 4, 4, 2), SketchError);
}

TEST(Rasterize, PenLiftSkipsSegment) {
  // (0,0) down -> (4,0) lift -> (4,4) down -> (0,4): the right edge is absent.
  const auto img = rasterize(seq({{4, 0, Pen::lift}, {0, 4, Pen::down}, {-4, 0, Pen::end}}), 8, 8, 1);
  const auto px = oracle::lit(img);
  EXPECT_TRUE(px.count({1, 1}));
  EXPECT_FALSE(px.count({6, 3}));
  EXPECT_TRUE(px.count({3, 6}));
}

TEST(Synthetic, DeterministicUnderSeed) {
  ShapeSpec spec;
  Rng a(11), b(11);
  const auto p = generate_synthetic_pair(spec, a), q = generate_synthetic_pair(spec, b);
  EXPECT_EQ(p.photo, q.photo);
  EXPECT_EQ(p.sketch, q.sketch);
}

TEST(Synthetic, NoiseFreeSquareTracesCorners) {
  ShapeSpec spec;
  spec.family = ShapeFamily::polygon;
  spec.min_sides = spec.max_sides = 4;
  spec.min_radius = spec.max_radius = 1.0;
  spec.angle_jitter = 0.0;
  spec.min_aspect = spec.max_aspect = 1.0;
  spec.stroke_jitter = 0.0;
  spec.vertex_dropout = 0.0;
  Rng rng(12);
  const auto p = generate_synthetic_pair(spec, rng);
  ASSERT_EQ(p.outline.size(), 1u);
  const auto& c = p.outline[0];
  ASSERT_EQ(c.size(), 4u);
  const auto abs = to_absolute(p.sketch);
  ASSERT_EQ(abs.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    const Point2 want = c[(i + 1) % 4];
    EXPECT_NEAR(abs[i].x + c[0].x, want.x, 1e-9);
    EXPECT_NEAR(abs[i].y + c[0].y, want.y, 1e-9);
  }
  auto d = [&](int i, int j) { return std::hypot(c[i].x - c[j].x, c[i].y - c[j].y); };
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(d(i, (i + 1) % 4), d(0, 1), 1e-9);
  EXPECT_NEAR(d(0, 2), d(1, 3), 1e-9);
  EXPECT_EQ(p.sketch.points().back().pen, Pen::end);
}

TEST(Synthetic, SketchMatchesOwnPhotoBest) {
  ShapeSpec spec;
  spec.stroke_jitter = 0.0;
  const int n = 100;
  std::vector<SyntheticPair> pairs;
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(21, i));
    pairs.push_back(generate_synthetic_pair(spec, rng));
  }
  const int sz = spec.image_size;
  // Edge band: pixels whose 4-neighbourhood luminance range exceeds a threshold,
  // dilated by one pixel.
  auto edge_band = [&](const RasterImage& img) {
    std::vector<char> e(sz * sz, 0), band(sz * sz, 0);
    auto lum = [&](int y, int x) { return (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0; };
    for (int y = 1; y + 1 < sz; ++y)
      for (int x = 1; x + 1 < sz; ++x) {
        const double g = std::max(std::abs(lum(y, x + 1) - lum(y, x - 1)), std::abs(lum(y + 1, x) - lum(y - 1, x)));
        e[y * sz + x] = g > 0.15;
      }
    for (int y = 0; y < sz; ++y)
      for (int x = 0; x < sz; ++x)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && xx >= 0 && yy < sz && xx < sz && e[yy * sz + xx]) band[y * sz + x] = 1;
          }
    return band;
  };
  // Sketch drawn in photo coordinates (stroke origin is the first outline vertex).
  auto drawn = [&](const SyntheticPair& p) {
    std::vector<char> out(sz * sz, 0);
    auto poly = absolute_polyline(p.sketch);
    for (auto& q : poly) q.pos = {q.pos.x + p.outline[0][0].x, q.pos.y + p.outline[0][0].y};
    for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
      if (poly[i].pen != Pen::down) continue;
      bresenham(static_cast<int>(std::lround(poly[i].pos.x)), static_cast<int>(std::lround(poly[i].pos.y)),
                static_cast<int>(std::lround(poly[i + 1].pos.x)), static_cast<int>(std::lround(poly[i + 1].pos.y)),
                [&](int x, int y) {
                  if (x >= 0 && y >= 0 && x < sz && y < sz) out[y * sz + x] = 1;
                });
    }
    return out;
  };
  std::vector<std::vector<char>> bands, sketches;
  for (const auto& p : pairs) {
    bands.push_back(edge_band(p.photo));
    sketches.push_back(drawn(p));
  }
  // Photos carry background clutter, so edge overlap alone is not unique;
  // the own photo must still win clearly on average and nearly always.
  int correct = 0;
  double own_cov = 0.0;
  for (int i = 0; i < n; ++i) {
    int best = -1, len = 0;
    double best_iou = -1.0, other_cov = 0.0, own = 0.0;
    for (int k = 0; k < sz * sz; ++k) len += sketches[i][k];
    for (int j = 0; j < n; ++j) {
      int inter = 0, uni = 0;
      for (int k = 0; k < sz * sz; ++k) {
        inter += sketches[i][k] && bands[j][k];
        uni += sketches[i][k] || bands[j][k];
      }
      const double iou = static_cast<double>(inter) / uni;
      if (iou > best_iou) {
        best_iou = iou;
        best = j;
      }
      if (j == i) own = static_cast<double>(inter) / len;
      else other_cov += static_cast<double>(inter) / len / (n - 1);
    }
    correct += best == i;
    own_cov += own / n;
    EXPECT_GT(own, other_cov) << "pair " << i;
  }
  EXPECT_GE(correct, 90);
  EXPECT_GT(own_cov, 0.7);
}

TEST(Synthetic, InvalidSpecRejected) {
  ShapeSpec spec;
  spec.min_sides = 9;
  Rng rng(1);
  EXPECT_THROW(generate_synthetic_pair(spec, rng), std::invalid_argument);
  EXPECT_THROW(parse_shape_family("star"), std::invalid_argument);
}

TEST(Corpus, RoundTripIsLossless) {
  auto c = make_synthetic_corpus(oracle::tiny_spec(), 5, 3, 9);
  const auto dir = temp_dir("corpus");
  save_corpus(dir, c);
  const auto back = load_corpus(dir);
  ASSERT_EQ(back.labeled.size(), 5u);
  ASSERT_EQ(back.unlabeled.size(), 3u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back.labeled[i].id, c.labeled[i].id);
    EXPECT_EQ(back.labeled[i].photo, c.labeled[i].photo);
    EXPECT_EQ(back.labeled[i].sketch, c.labeled[i].sketch);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.unlabeled[i].photo, c.unlabeled[i].photo);
  fs::remove_all(dir);
}

TEST(Corpus, RejectsNonOneHotPenWithLineNumber) {
  std::istringstream is(
      "{\"id\":\"a\",\"photo\":\"a\",\"points\":[[1,0,1,0,0],[0,1,0,0,1]]}\n"
      "{\"id\":\"b\",\"photo\":\"b\",\"points\":[[1,0,1,1,0]]}\n");
  try {
    read_sketches(is, "sketches.ndjson");
    FAIL() << "expected rejection";
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("sketches.ndjson:2"), std::string::npos) << e.what();
  }
  std::istringstream bad("{not json}\n");
  EXPECT_THROW(read_sketches(bad, "x"), CorpusError);
}

TEST(Corpus, EmptyFilesGiveEmptyCorpus) {
  const auto dir = temp_dir("empty");
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.tsv").close();
  std::ofstream(dir / "sketches.ndjson").close();
  EXPECT_TRUE(load_corpus(dir).empty());
  std::istringstream empty("");
  EXPECT_TRUE(read_sketches(empty, "x").empty());
  fs::remove_all(dir);
}
