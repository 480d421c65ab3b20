#include "support.hpp"

#include "duorun/transport.hpp"

#include <atomic>
#include <map>
#include <thread>

using namespace duorun;
using duorun::testing::kBackends;

namespace
{
    Bytes bytes_of(std::initializer_list<int> values)
    {
        Bytes out;
        for (int v : values)
        {
            out.push_back(static_cast<std::uint8_t>(v));
        }
        return out;
    }

    Bytes encode_u64(std::uint64_t v)
    {
        ByteWriter w;
        w.put_u64(v);
        return std::move(w).take();
    }
} // namespace

TEST_CASE("single worker world needs no peers")
{
    WorldConfig cfg;
    auto ep = init_world(cfg, 0);
    CHECK(ep.rank() == 0);
    CHECK(ep.world_size() == 1);
    ep.barrier();
    ep.send_bytes(0, 3, bytes_of({1, 2}));
    auto p = ep.recv_bytes();
    CHECK(p.src == 0);
    CHECK(p.tag == 3);
    CHECK(p.payload == bytes_of({1, 2}));
    ep.finalize();
    CHECK(ep.finalized());
}

TEST_CASE("configuration errors")
{
    WorldConfig cfg;
    cfg.n_workers = 2;
    CHECK_THROWS_AS(init_world(cfg, 5), ConfigError);
    CHECK_THROWS_AS(init_world(cfg, -1), ConfigError);
    cfg.n_workers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.n_workers = 2;
    cfg.backend = Backend::tcp;
    cfg.base_port = 80;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.base_port = 70000;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.base_port = 20000;
    CHECK_NOTHROW(cfg.validate());
    CHECK(parse_backend("inproc") == Backend::in_process);
    CHECK(parse_backend("tcp") == Backend::tcp);
    CHECK_THROWS_AS(parse_backend("udp"), ConfigError);
}

TEST_CASE("frame header layout is little-endian length, src, dest, tag")
{
    const auto h = encode_frame_header(0x01020304u, 5, 6, 0xA0B0C0D0u);
    const std::array<std::uint8_t, 16> expected{0x04, 0x03, 0x02, 0x01, 5, 0, 0, 0,
                                                6,    0,    0,    0,    0xD0, 0xC0, 0xB0, 0xA0};
    CHECK(h == expected);
    const auto d = decode_frame_header(h);
    CHECK(d.length == 0x01020304u);
    CHECK(d.src == 5);
    CHECK(d.dest == 6);
    CHECK(d.tag == 0xA0B0C0D0u);
}

TEST_CASE("echo identity, FIFO per triple and bounds")
{
    for (auto backend : kBackends)
    {
        CAPTURE(to_string(backend));
        testing::run(2, backend, [](Endpoint &ep) {
            if (ep.rank() == 0)
            {
                Bytes payload(16);
                for (std::size_t i = 0; i < payload.size(); ++i)
                {
                    payload[i] = static_cast<std::uint8_t>(i * 7);
                }
                ep.send_bytes(1, 7, payload);
                ep.send_bytes(1, 7, bytes_of({0xA}));
                ep.send_bytes(1, 7, bytes_of({0xB}));
                ep.send_bytes(1, 8, Bytes{});
                CHECK_THROWS_AS(ep.send_bytes(2, 7, Bytes{}), ConfigError);
                CHECK_THROWS_AS(ep.send_bytes(-1, 7, Bytes{}), ConfigError);
                CHECK_THROWS_AS(ep.send_bytes(1, 7, Bytes(ep.max_payload() + 1)), ConfigError);
            }
            else
            {
                auto p = ep.recv_bytes(0, 7);
                CHECK(p.src == 0);
                CHECK(p.dest == 1);
                CHECK(p.payload.size() == 16);
                CHECK(p.payload[3] == 21);
                CHECK(ep.recv_bytes(0, 7).payload == bytes_of({0xA}));
                CHECK(ep.recv_bytes(0, 7).payload == bytes_of({0xB}));
                auto empty = ep.recv_bytes(std::nullopt, 8);
                CHECK(empty.payload.empty());
            }
        });
    }
}

TEST_CASE("selective receive retains skipped messages")
{
    for (auto backend : kBackends)
    {
        CAPTURE(to_string(backend));
        testing::run(3, backend, [](Endpoint &ep) {
            if (ep.rank() == 2)
            {
                ep.send_bytes(0, 1, bytes_of({1}));
                ep.send_bytes(0, 9, bytes_of({9}));
            }
            ep.barrier();
            if (ep.rank() == 0)
            {
                // Make sure both messages are queued before filtering.
                auto nine = ep.recv_bytes(std::nullopt, 9);
                CHECK(nine.src == 2);
                CHECK(nine.payload == bytes_of({9}));
                auto any = ep.recv_bytes();
                CHECK(any.src == 2);
                CHECK(any.tag == 1);
                CHECK_FALSE(ep.try_recv(Match::from(1, 1)).has_value());
                CHECK_FALSE(ep.recv_for(Match::from(1, 1), std::chrono::milliseconds(20)).has_value());
            }
        });
    }
}

TEST_CASE("ping-pong soak keeps per-triple sequence numbers")
{
    for (auto backend : kBackends)
    {
        CAPTURE(to_string(backend));
        testing::run(2, backend, [](Endpoint &ep) {
            const int peer = 1 - ep.rank();
            for (std::uint64_t i = 0; i < 1000; ++i)
            {
                if (ep.rank() == 0)
                {
                    ep.send_bytes(peer, 4, encode_u64(i));
                    auto p = ep.recv_bytes(peer, 4);
                    ByteReader r(p.payload);
                    REQUIRE(r.get_u64() == i);
                }
                else
                {
                    auto p = ep.recv_bytes(peer, 4);
                    ByteReader r(p.payload);
                    REQUIRE(r.get_u64() == i);
                    ep.send_bytes(peer, 4, std::move(p.payload));
                }
            }
        });
    }
}

TEST_CASE("all-to-all delivery across tags is exactly once and ordered")
{
    static constexpr std::uint64_t kPerTriple = 500;
    for (auto backend : kBackends)
    {
        CAPTURE(to_string(backend));
        testing::run(4, backend, [](Endpoint &ep) {
            for (std::uint64_t i = 0; i < kPerTriple; ++i)
            {
                for (int d = 0; d < ep.world_size(); ++d)
                {
                    for (Tag t = 0; t < 2; ++t)
                    {
                        ep.send_bytes(d, t, encode_u64(i));
                    }
                }
            }
            std::map<std::pair<int, Tag>, std::uint64_t> next;
            const auto expected = kPerTriple * 2 * static_cast<std::uint64_t>(ep.world_size());
            for (std::uint64_t k = 0; k < expected; ++k)
            {
                auto p = ep.recv_bytes();
                ByteReader r(p.payload);
                auto &n = next[{p.src, p.tag}];
                REQUIRE(r.get_u64() == n);
                ++n;
            }
            CHECK_FALSE(ep.try_recv(Match::any()).has_value());
            for (auto &[key, n] : next)
            {
                CHECK(n == kPerTriple);
            }
        });
    }
}

TEST_CASE("barrier waits for the slowest rank")
{
    for (auto backend : kBackends)
    {
        CAPTURE(to_string(backend));
        std::atomic<int> early{0};
        testing::run(4, backend, [&](Endpoint &ep) {
            ep.barrier();
            const double t0 = monotonic_now();
            if (ep.rank() == 3)
            {
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            }
            ep.barrier();
            if (monotonic_now() - t0 < 0.099)
            {
                ++early;
            }
        });
        CHECK(early.load() == 0);
    }
}

TEST_CASE("messages sent after a barrier are not seen before it")
{
    for (auto backend : kBackends)
    {
        CAPTURE(to_string(backend));
        testing::run(4, backend, [](Endpoint &ep) {
            for (std::uint64_t epoch = 0; epoch < 20; ++epoch)
            {
                for (int d = 0; d < ep.world_size(); ++d)
                {
                    if (d != ep.rank())
                    {
                        ep.send_bytes(d, 11, encode_u64(epoch));
                    }
                }
                for (int k = 0; k < ep.world_size() - 1; ++k)
                {
                    auto p = ep.recv_bytes(std::nullopt, 11);
                    ByteReader r(p.payload);
                    REQUIRE(r.get_u64() == epoch);
                }
                ep.barrier();
            }
        });
    }
}

TEST_CASE("monotonic clock")
{
    const double t1 = monotonic_now();
    const double t2 = monotonic_now();
    CHECK(t2 >= t1);
    CHECK(t2 - t1 < 1e-3);
    const double a = monotonic_now();
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    const double b = monotonic_now();
    CHECK(b - a >= 0.010);
    CHECK(b - a <= 0.060);
}

TEST_CASE("duplicate rank and join timeout")
{
    WorldConfig cfg = testing::world(2, Backend::in_process);
    cfg.rendezvous_address = "dup-test";
    cfg.join_timeout = std::chrono::milliseconds(300);
    std::atomic<int> config_errors{0};
    std::atomic<int> formation_errors{0};
    auto attempt = [&] {
        try
        {
            auto ep = init_world(cfg, 0);
        }
        catch (const ConfigError &)
        {
            ++config_errors;
        }
        catch (const WorldFormationError &)
        {
            ++formation_errors;
        }
    };
    std::thread a(attempt);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    std::thread b(attempt);
    a.join();
    b.join();
    CHECK(config_errors.load() == 1);
    CHECK(formation_errors.load() == 1);

    WorldConfig tcp = testing::world(2, Backend::tcp);
    tcp.base_port = pick_free_port();
    tcp.join_timeout = std::chrono::milliseconds(300);
    CHECK_THROWS_AS(init_world(tcp, 1), WorldFormationError);
}

TEST_CASE("abort wakes blocked peers with a shutdown error")
{
    for (auto backend : kBackends)
    {
        CAPTURE(to_string(backend));
        std::atomic<int> shutdowns{0};
        CHECK_THROWS_AS(testing::run(3, backend,
                                     [&](Endpoint &ep) {
                                         if (ep.rank() == 0)
                                         {
                                             std::this_thread::sleep_for(std::chrono::milliseconds(50));
                                             throw UsageError("boom");
                                         }
                                         try
                                         {
                                             ep.recv_bytes(0, 1);
                                         }
                                         catch (const ShutdownError &)
                                         {
                                             ++shutdowns;
                                             throw;
                                         }
                                     }),
                        UsageError);
        CHECK(shutdowns.load() == 2);
    }
}

TEST_CASE("operations after finalize fail")
{
    for (auto backend : kBackends)
    {
        CAPTURE(to_string(backend));
        testing::run(2, backend, [](Endpoint &ep) {
            ep.barrier();
        });
        WorldConfig cfg;
        auto ep = init_world(cfg, 0);
        ep.finalize();
        CHECK_THROWS_AS(ep.send_bytes(0, 1, Bytes{}), ShutdownError);
        CHECK_THROWS_AS(ep.recv_bytes(), ShutdownError);
    }
}

TEST_CASE("tcp worlds run as separate processes")
{
    WorldConfig cfg = testing::world(3, Backend::tcp);
    run_world(
        cfg,
        [](Endpoint &ep) {
            const int next = (ep.rank() + 1) % ep.world_size();
            const int prev = (ep.rank() + ep.world_size() - 1) % ep.world_size();
            ep.send_bytes(next, 2, encode_u64(static_cast<std::uint64_t>(ep.rank())));
            auto p = ep.recv_bytes(prev, 2);
            ByteReader r(p.payload);
            if (r.get_u64() != static_cast<std::uint64_t>(prev))
            {
                throw Error("ring mismatch");
            }
        },
        LaunchMode::processes);
}
