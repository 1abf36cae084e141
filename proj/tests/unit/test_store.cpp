#include <doctest.h>

#include "lila/store.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>
#include <set>
#include <thread>

using namespace lila;
namespace fs = std::filesystem;

namespace {

struct TempDb
{
    fs::path dir;
    std::unique_ptr<Database> db;

    TempDb()
    {
        dir = fs::temp_directory_path() / ("lila-db-" + std::to_string(std::random_device{}()));
        fs::create_directories(dir);
        db = std::make_unique<Database>((dir / "test.db").string());
    }

    ~TempDb()
    {
        db.reset();
        fs::remove_all(dir);
    }

    void reopen()
    {
        db.reset();
        db = std::make_unique<Database>((dir / "test.db").string());
    }
};

std::string digest_of(unsigned n)
{
    std::string digest(digest_length, 'a');
    for (std::size_t i = 0; i < digest_length; ++i, n /= digest_alphabet.size())
        digest[i] = digest_alphabet[n % digest_alphabet.size()];
    return digest;
}

BuilderKey test_key(const std::string & name)
{
    SecretKeyBytes seed{};
    for (std::size_t i = 0; i < name.size() && i < seed.size(); ++i)
        seed[i] = static_cast<std::uint8_t>(name[i]);
    return keygen(name, seed);
}

AttestationRecord make_record(unsigned drv_n, unsigned out_n, const BuilderKey & key, char hash_nibble = '0')
{
    AttestationRecord r;
    r.drv_id = DrvId::parse("/nix/store/" + digest_of(drv_n) + "-pkg-" + std::to_string(drv_n) + ".drv");
    r.output_path = StorePath::parse("/nix/store/" + digest_of(1000 + out_n) + "-pkg-" + std::to_string(drv_n));
    r.output_hash = OutputHash(std::string(64, hash_nibble));
    r.output_sig = sign(key, r.drv_id, r.output_path, r.output_hash);
    return r;
}

}

TEST_CASE("users round trip")
{
    TempDb t;
    auto key = test_key("builder1");

    CHECK(!t.db->get_user("builder1"));
    t.db->upsert_user(key.public_part());

    auto row = t.db->get_user("builder1");
    REQUIRE(row);
    CHECK(row->user_id == "builder1");
    CHECK(PublicKey::parse(row->public_key) == key.public_part());

    // upsert replaces the key
    auto other = keygen("builder1");
    t.db->upsert_user(other.public_part());
    CHECK(PublicKey::parse(t.db->get_user("builder1")->public_key) == other.public_part());

    t.db->upsert_user(test_key("builder2").public_part());
    CHECK(t.db->list_users().size() == 2);
    CHECK(t.db->list_users()[0].user_id == "builder1");
}

TEST_CASE("token mint and verify")
{
    TempDb t;
    t.db->upsert_user(test_key("builder1").public_part());
    t.db->upsert_user(test_key("builder2").public_part());

    auto token1 = t.db->create_token("builder1");
    auto token2 = t.db->create_token("builder2");
    auto token1b = t.db->create_token("builder1"); // several tokens per user

    CHECK(t.db->verify_token(token1.secret) == "builder1");
    CHECK(t.db->verify_token(token2.secret) == "builder2");
    CHECK(t.db->verify_token(token1b.secret) == "builder1");

    CHECK(!t.db->verify_token(""));
    CHECK(!t.db->verify_token("no-dot-at-all"));
    CHECK(!t.db->verify_token(token1.token_id + ".0000"));
    CHECK(!t.db->verify_token(token1.token_id + "." + std::string(64, '0')));
    CHECK(!t.db->verify_token("ffffffffffffffff." + std::string(64, '0')));
    // token1's id with token2's secret part
    auto dot = token2.secret.find('.');
    CHECK(!t.db->verify_token(token1.token_id + token2.secret.substr(dot)));

    // minting for an unregistered user violates the foreign key
    CHECK_THROWS_AS(t.db->create_token("ghost"), StorageError);
}

TEST_CASE("insert is idempotent on the uniqueness tuple")
{
    TempDb t;
    auto key = test_key("builder1");
    t.db->upsert_user(key.public_part());

    auto record = make_record(1, 1, key);
    auto first = t.db->insert_attestation(record, "builder1", 1000);
    CHECK(first.created);
    CHECK(first.row.id > 0);
    CHECK(first.row.drv_hash == record.drv_id.drv_hash());
    CHECK(first.row.received_at == 1000);

    auto second = t.db->insert_attestation(record, "builder1", 2000);
    CHECK(!second.created);
    CHECK(second.row.id == first.row.id);
    CHECK(second.row.received_at == 1000); // original row, original clock
    CHECK(t.db->count_attestations() == 1);

    // same record under a different user: distinct row
    auto key2 = test_key("builder2");
    t.db->upsert_user(key2.public_part());
    auto record2 = record;
    record2.output_sig = sign(key2, record.drv_id, record.output_path, record.output_hash);
    CHECK(t.db->insert_attestation(record2, "builder2", 3000).created);

    // same builder, same output, different hash: divergence is a new row
    auto record3 = make_record(1, 1, key, 'f');
    CHECK(t.db->insert_attestation(record3, "builder1", 4000).created);
    CHECK(t.db->count_attestations() == 3);

    // unknown user violates the foreign key
    CHECK_THROWS_AS(t.db->insert_attestation(record, "ghost", 1), StorageError);
}

TEST_CASE("query_by_output orders by receipt and paginates")
{
    TempDb t;
    std::vector<std::string> users{"u1", "u2", "u3", "u4", "u5"};
    for (auto & u : users)
        t.db->upsert_user(test_key(u).public_part());

    // same (drv, output), five users, deliberately shuffled receipt times
    std::vector<std::int64_t> times{500, 100, 300, 200, 400};
    for (std::size_t i = 0; i < users.size(); ++i) {
        auto key = test_key(users[i]);
        auto record = make_record(7, 7, key);
        t.db->insert_attestation(record, users[i], times[i]);
    }
    auto output_path = make_record(7, 7, test_key("u1")).output_path.render();

    auto all = t.db->query_by_output(output_path, 100);
    REQUIRE(all.size() == 5);
    for (std::size_t i = 1; i < all.size(); ++i)
        CHECK(std::pair(all[i - 1].received_at, all[i - 1].id) < std::pair(all[i].received_at, all[i].id));
    CHECK(all[0].received_at == 100);
    CHECK(all[4].received_at == 500);

    // pagination partitions the rows exactly
    auto page1 = t.db->query_by_output(output_path, 2);
    REQUIRE(page1.size() == 2);
    auto page2 = t.db->query_by_output(output_path, 2, page1.back().id);
    REQUIRE(page2.size() == 2);
    auto page3 = t.db->query_by_output(output_path, 2, page2.back().id);
    REQUIRE(page3.size() == 1);
    CHECK(t.db->query_by_output(output_path, 2, page3.back().id).empty());

    std::set<std::uint64_t> seen;
    for (auto & rows : {page1, page2, page3})
        for (auto & row : rows)
            CHECK(seen.insert(row.id).second);
    CHECK(seen.size() == 5);

    // unknown anchor id yields an empty page, unknown path an empty list
    CHECK(t.db->query_by_output(output_path, 2, 999999).empty());
    CHECK(t.db->query_by_output("/nix/store/" + digest_of(4242) + "-nothing", 10).empty());
}

TEST_CASE("query_by_drv matches the digest exactly")
{
    TempDb t;
    auto key = test_key("builder1");
    t.db->upsert_user(key.public_part());

    auto r1 = make_record(1, 1, key);
    auto r2 = make_record(2, 2, key);
    t.db->insert_attestation(r1, "builder1", 1);
    t.db->insert_attestation(r2, "builder1", 2);

    CHECK(t.db->query_by_drv(r1.drv_id.drv_hash()).size() == 1);
    CHECK(t.db->query_by_drv(r2.drv_id.drv_hash()).size() == 1);
    CHECK(t.db->query_by_drv(digest_of(777)).empty());
}

TEST_CASE("list_drvs pagination covers every derivation exactly once")
{
    TempDb t;
    auto key = test_key("builder1");
    t.db->upsert_user(key.public_part());

    const unsigned n = 23;
    for (unsigned i = 0; i < n; ++i)
        t.db->insert_attestation(make_record(i, i, key), "builder1", i);

    std::set<std::string> seen;
    std::optional<std::string> after;
    while (true) {
        auto page = t.db->list_drvs(5, after);
        if (page.empty())
            break;
        CHECK(page.size() <= 5);
        for (auto & row : page) {
            CHECK(seen.insert(row.drv_hash).second); // no overlap between pages
            CHECK((!after || row.drv_hash > *after));
        }
        after = page.back().drv_hash;
    }
    CHECK(seen.size() == n);
}

TEST_CASE("insert_batch is transactional and reports created flags")
{
    TempDb t;
    auto key = test_key("ci");
    t.db->upsert_user(key.public_part());

    std::vector<std::pair<AttestationRecord, std::int64_t>> batch;
    for (unsigned i = 0; i < 10; ++i)
        batch.emplace_back(make_record(i, i, key), 100 + i);
    batch.emplace_back(make_record(0, 0, key), 500); // duplicate of the first

    auto created = t.db->insert_batch(batch, "ci");
    REQUIRE(created.size() == 11);
    for (std::size_t i = 0; i < 10; ++i)
        CHECK(created[i]);
    CHECK(!created[10]);
    CHECK(t.db->count_attestations() == 10);

    // re-running the whole batch adds nothing
    auto again = t.db->insert_batch(batch, "ci");
    CHECK(std::count(again.begin(), again.end(), true) == 0);
    CHECK(t.db->count_attestations() == 10);
}

TEST_CASE("rows survive close and reopen")
{
    TempDb t;
    auto key = test_key("builder1");
    t.db->upsert_user(key.public_part());
    auto token = t.db->create_token("builder1");
    t.db->insert_attestation(make_record(1, 1, key), "builder1", 42);

    t.reopen();

    CHECK(t.db->count_attestations() == 1);
    CHECK(t.db->all_attestations()[0].received_at == 42);
    CHECK(t.db->verify_token(token.secret) == "builder1");
    CHECK(t.db->get_user("builder1"));
}

TEST_CASE("racing identical inserts leave exactly one row")
{
    TempDb t;
    auto key = test_key("builder1");
    t.db->upsert_user(key.public_part());
    auto record = make_record(1, 1, key);

    constexpr int threads = 8;
    std::atomic<int> created_count{0};
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i)
        pool.emplace_back([&] {
            auto result = t.db->insert_attestation(record, "builder1", 1);
            if (result.created)
                ++created_count;
        });
    for (auto & th : pool)
        th.join();

    CHECK(created_count == 1);
    CHECK(t.db->count_attestations() == 1);
}

TEST_CASE("report definitions round trip")
{
    TempDb t;
    CHECK(!t.db->get_report("core"));
    CHECK(t.db->list_reports().empty());

    t.db->upsert_report("core", "{\"v\":1}");
    t.db->upsert_report("extra", "{\"v\":2}");
    CHECK(t.db->get_report("core") == "{\"v\":1}");

    t.db->upsert_report("core", "{\"v\":3}");
    CHECK(t.db->get_report("core") == "{\"v\":3}");
    CHECK(t.db->list_reports().size() == 2);
}
