#include <doctest.h>

#include "lila/archive.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include <sys/stat.h>
#include <unistd.h>

using namespace lila;
namespace fs = std::filesystem;

namespace {

std::string bytes(std::initializer_list<int> list)
{
    std::string out;
    for (int b : list)
        out += static_cast<char>(b);
    return out;
}

struct TempDir
{
    fs::path path;

    TempDir()
    {
        auto base = fs::temp_directory_path();
        std::random_device rd;
        path = base / ("lila-test-" + std::to_string(rd()) + "-" + std::to_string(::getpid()));
        fs::create_directories(path);
    }

    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path & p, std::string_view contents, bool executable = false)
{
    std::ofstream out(p, std::ios::binary);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.close();
    fs::permissions(p, executable ? fs::perms(0755) : fs::perms(0644));
}

/* The golden fixtures; tests/oracle/compute_golden.py builds the same trees
   and prints the hashes frozen below. */
FsTree golden_hello()
{
    return FsTree{FsTree::Regular{false, "hello\n"}};
}

FsTree golden_empty_dir()
{
    return FsTree{FsTree::Directory{}};
}

FsTree golden_mixed_tree()
{
    FsTree::Directory bin;
    bin.add("jq", FsTree{FsTree::Regular{true, std::string("\x7f") + "ELF\x02\x01\x01" + bytes({0}) + "jq-payload" + bytes({0})}});
    FsTree::Directory share;
    share.add("empty", FsTree{FsTree::Regular{false, ""}});
    share.add("jq-link", FsTree{FsTree::Symlink{"../bin/jq"}});
    FsTree::Directory root;
    root.add("README", FsTree{FsTree::Regular{false, "jq - commandline JSON processor\n"}});
    root.add("bin", FsTree{std::move(bin)});
    root.add("share", FsTree{std::move(share)});
    return FsTree{std::move(root)};
}

const std::string golden_hello_hash = "1c37d01af40be2e80691de3cc3df44377a699afbb17c68f080964b2fd071fc13";
const std::string golden_empty_dir_hash = "a50a5ab6d992f5598edd92105059fae9acfc192981e08bd88534c2167e92526a";
const std::string golden_mixed_tree_hash = "b5e41e3b9a176540d06e390cbb1864f5052009bb7830ac6fe8900898dbed3039";

/* Random valid FsTrees, depth <= 6. fs_safe keeps entry names usable as
   actual file names for on-disk comparisons. */
FsTree random_tree(std::mt19937 & rng, int depth, bool fs_safe)
{
    auto random_name = [&]() {
        const std::string alphabet = fs_safe
            ? "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._+- "
            : "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._+- \t!@#$%^&*()[]{}";
        while (true) {
            std::string name;
            auto len = 1 + rng() % 12;
            for (std::size_t i = 0; i < len; ++i)
                name += alphabet[rng() % alphabet.size()];
            if (is_valid_entry_name(name) && !(fs_safe && (name.front() == ' ' || name.back() == ' ')))
                return name;
        }
    };
    auto random_contents = [&]() {
        std::string contents;
        auto len = rng() % 200;
        for (std::size_t i = 0; i < len; ++i)
            contents += static_cast<char>(rng() % 256);
        return contents;
    };

    auto pick = rng() % (depth > 0 ? 4 : 2);
    switch (pick) {
    case 0: return FsTree{FsTree::Regular{false, random_contents()}};
    case 1: return FsTree{FsTree::Regular{true, random_contents()}};
    case 2: return FsTree{FsTree::Symlink{random_name()}};
    default: {
        FsTree::Directory dir;
        auto n = rng() % 5;
        for (std::size_t i = 0; i < n; ++i) {
            auto name = random_name();
            bool duplicate = false;
            for (auto & [existing, child] : dir.entries)
                duplicate = duplicate || existing == name;
            if (!duplicate)
                dir.add(name, random_tree(rng, depth - 1, fs_safe));
        }
        return FsTree{std::move(dir)};
    }
    }
}

/* Materialize a tree on disk for encode_path / oracle comparison. */
void write_tree(const fs::path & root, const FsTree & tree)
{
    if (auto * reg = std::get_if<FsTree::Regular>(&tree.node)) {
        write_file(root, reg->contents, reg->executable);
    } else if (auto * link = std::get_if<FsTree::Symlink>(&tree.node)) {
        fs::create_symlink(link->target, root);
    } else {
        fs::create_directory(root);
        for (auto & [name, child] : std::get<FsTree::Directory>(tree.node).entries)
            write_tree(root / name, child);
    }
}

/* Hash a path with the independent Python reference encoder. */
std::string oracle_hash(const fs::path & path)
{
    std::string command = "python3 '" LILA_SOURCE_DIR "/tests/oracle/nar_reference.py' '" + path.string() + "'";
    FILE * pipe = popen(command.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string output;
    char buf[256];
    while (auto n = fread(buf, 1, sizeof(buf), pipe))
        output.append(buf, n);
    int rc = pclose(pipe);
    REQUIRE(rc == 0);
    auto space = output.find(' ');
    REQUIRE(space == 64); // "<sha256hex>  <path>\n"
    return output.substr(0, 64);
}

}

TEST_CASE("encode_string framing")
{
    CHECK(encode_string("") == bytes({0, 0, 0, 0, 0, 0, 0, 0}));

    auto magic = encode_string("nix-archive-1");
    CHECK(magic.size() == 24);
    CHECK(magic.substr(0, 8) == bytes({0x0d, 0, 0, 0, 0, 0, 0, 0}));
    CHECK(magic.substr(8, 13) == "nix-archive-1");
    CHECK(magic.substr(21) == bytes({0, 0, 0}));

    auto entry = encode_string("entry");
    CHECK(entry.size() == 16);
    CHECK(entry.substr(0, 8) == bytes({5, 0, 0, 0, 0, 0, 0, 0}));

    // every output length is a multiple of 8
    std::mt19937 rng(7);
    for (int i = 0; i < 200; ++i) {
        std::string s;
        auto len = rng() % 40;
        for (std::size_t j = 0; j < len; ++j)
            s += static_cast<char>(rng() % 256);
        auto encoded = encode_string(s);
        CHECK(encoded.size() % 8 == 0);
        CHECK(encoded.size() >= s.size() + 8);
        CHECK(encoded.size() < s.size() + 16);
    }
}

TEST_CASE("empty directory encoding is the five-token sequence")
{
    auto encoded = encode_tree(golden_empty_dir());
    // es("nix-archive-1") es("(") es("type") es("directory") es(")")
    CHECK(encoded ==
          encode_string("nix-archive-1") + encode_string("(") + encode_string("type")
              + encode_string("directory") + encode_string(")"));
    CHECK(encoded.size() == 96);
    CHECK(hash_tree(golden_empty_dir()).hex() == golden_empty_dir_hash);
}

TEST_CASE("golden vectors match the independent reference encoder")
{
    CHECK(hash_tree(golden_hello()).hex() == golden_hello_hash);
    CHECK(encode_tree(golden_hello()).size() == 120);
    CHECK(hash_tree(golden_mixed_tree()).hex() == golden_mixed_tree_hash);
    CHECK(encode_tree(golden_mixed_tree()).size() == 1272);
}

TEST_CASE("golden fixtures hash identically from disk")
{
    TempDir tmp;
    write_file(tmp.path / "f", "hello\n");
    CHECK(hash_tree(tmp.path / "f").hex() == golden_hello_hash);

    fs::create_directory(tmp.path / "d");
    CHECK(hash_tree(tmp.path / "d").hex() == golden_empty_dir_hash);

    write_tree(tmp.path / "t", golden_mixed_tree());
    CHECK(hash_tree(tmp.path / "t").hex() == golden_mixed_tree_hash);
}

TEST_CASE("executable marker changes the encoding")
{
    auto plain = FsTree{FsTree::Regular{false, "x"}};
    auto exec = FsTree{FsTree::Regular{true, "x"}};
    CHECK(encode_tree(plain) != encode_tree(exec));
    CHECK(encode_tree(exec).size() == encode_tree(plain).size() + encode_string("executable").size() + encode_string("").size());
}

TEST_CASE("entry insertion order does not exist: directories are canonical")
{
    // Directory::add keeps entries bytewise sorted wherever insertion starts
    FsTree::Directory d1;
    d1.add("b", FsTree{FsTree::Regular{false, "1"}});
    d1.add("a", FsTree{FsTree::Regular{false, "2"}});
    d1.add("C", FsTree{FsTree::Regular{false, "3"}});

    FsTree::Directory d2;
    d2.add("C", FsTree{FsTree::Regular{false, "3"}});
    d2.add("a", FsTree{FsTree::Regular{false, "2"}});
    d2.add("b", FsTree{FsTree::Regular{false, "1"}});

    CHECK(encode_tree(FsTree{d1}) == encode_tree(FsTree{d2}));
    // bytewise order: uppercase before lowercase
    CHECK(d1.entries[0].first == "C");

    CHECK_THROWS_AS(d1.add("a", FsTree{}), InvalidEntryName); // duplicate
    CHECK_THROWS_AS(d1.add("", FsTree{}), InvalidEntryName);
    CHECK_THROWS_AS(d1.add(".", FsTree{}), InvalidEntryName);
    CHECK_THROWS_AS(d1.add("..", FsTree{}), InvalidEntryName);
    CHECK_THROWS_AS(d1.add("a/b", FsTree{}), InvalidEntryName);
    CHECK_THROWS_AS(d1.add(std::string("a\0b", 3), FsTree{}), InvalidEntryName);
}

TEST_CASE("round trip and canonical form on randomized trees")
{
    std::mt19937 rng(1234);
    for (int i = 0; i < 300; ++i) {
        auto tree = random_tree(rng, 6, false);
        auto encoded = encode_tree(tree);
        auto decoded = decode_tree(encoded);
        CHECK(decoded == tree);
        // canonical form: accepted input re-encodes to itself
        CHECK(encode_tree(decoded) == encoded);
    }
}

TEST_CASE("decoder rejects malformed archives")
{
    auto encoded = encode_tree(golden_mixed_tree());

    SUBCASE("truncation")
    {
        for (std::size_t cut : {std::size_t(1), std::size_t(7), std::size_t(8), encoded.size() / 2})
            CHECK_THROWS_AS(decode_tree(std::string_view(encoded).substr(0, encoded.size() - cut)), MalformedArchive);
        CHECK_THROWS_AS(decode_tree(""), MalformedArchive);
    }

    SUBCASE("trailing bytes")
    {
        CHECK_THROWS_AS(decode_tree(encoded + std::string(8, '\0')), MalformedArchive);
        CHECK_THROWS_AS(decode_tree(encoded + "x"), MalformedArchive);
    }

    SUBCASE("bad magic")
    {
        auto bad = encoded;
        bad[8] = 'N';
        CHECK_THROWS_AS(decode_tree(bad), MalformedArchive);
    }

    SUBCASE("nonzero padding")
    {
        // the magic token "nix-archive-1" is padded with 3 zero bytes at offsets 21..23
        auto bad = encoded;
        bad[21] = 1;
        CHECK_THROWS_AS(decode_tree(bad), MalformedArchive);
    }

    SUBCASE("unsorted directory entries")
    {
        FsTree::Directory dir;
        dir.add("a", FsTree{FsTree::Regular{false, "1"}});
        dir.add("b", FsTree{FsTree::Regular{false, "2"}});
        auto good = encode_tree(FsTree{dir});
        // swap the single-letter names inside their es() frames
        auto a_pos = good.find(encode_string("a"));
        auto b_pos = good.find(encode_string("b"));
        REQUIRE(a_pos != std::string::npos);
        REQUIRE(b_pos != std::string::npos);
        auto bad = good;
        std::swap(bad[a_pos + 8], bad[b_pos + 8]);
        CHECK_THROWS_AS(decode_tree(bad), MalformedArchive);
    }

    SUBCASE("duplicate directory entries")
    {
        FsTree::Directory dir;
        dir.add("a", FsTree{FsTree::Regular{false, "1"}});
        dir.add("b", FsTree{FsTree::Regular{false, "1"}});
        auto good = encode_tree(FsTree{dir});
        auto b_pos = good.find(encode_string("b"));
        auto bad = good;
        bad[b_pos + 8] = 'a';
        CHECK_THROWS_AS(decode_tree(bad), MalformedArchive);
    }

    SUBCASE("error carries a byte offset")
    {
        try {
            decode_tree("");
            FAIL("expected MalformedArchive");
        } catch (const MalformedArchive & e) {
            CHECK(e.offset == 0);
        }
    }
}

TEST_CASE("hashing ignores mtimes and permissions beyond the executable bit")
{
    TempDir tmp;
    write_tree(tmp.path / "t", golden_mixed_tree());
    auto first = hash_tree(tmp.path / "t");

    // touch everything, change a non-executable mode detail
    for (auto & de : fs::recursive_directory_iterator(tmp.path / "t")) {
        if (de.is_regular_file()) {
            fs::last_write_time(de.path(), fs::file_time_type::clock::now());
            auto mode = fs::status(de.path()).permissions();
            fs::permissions(
                de.path(),
                (mode & fs::perms::owner_exec) != fs::perms::none ? fs::perms(0700) : fs::perms(0600));
        }
    }
    CHECK(hash_tree(tmp.path / "t") == first);

    // flipping one content byte changes the hash
    write_file(tmp.path / "t" / "README", "jq - commandline JSON processor!", false);
    CHECK(hash_tree(tmp.path / "t") != first);
}

TEST_CASE("encode_path streams and matches encode_tree")
{
    TempDir tmp;
    std::mt19937 rng(99);
    std::string big;
    big.reserve(1 << 20);
    for (int i = 0; i < (1 << 20); ++i)
        big += static_cast<char>(rng() % 256);
    write_file(tmp.path / "big", big, true);

    std::string streamed;
    encode_path(tmp.path / "big", [&](std::string_view chunk) { streamed.append(chunk); });
    CHECK(streamed == encode_tree(FsTree{FsTree::Regular{true, big}}));
}

TEST_CASE("encode_path error cases")
{
    TempDir tmp;
    CHECK_THROWS_AS(hash_tree(tmp.path / "missing"), IoError);

    if (::mkfifo((tmp.path / "fifo").c_str(), 0600) == 0)
        CHECK_THROWS_AS(hash_tree(tmp.path / "fifo"), UnsupportedNodeType);
}

TEST_CASE("disk trees hash identically through the independent oracle")
{
    TempDir tmp;
    std::mt19937 rng(2718);
    for (int i = 0; i < 8; ++i) {
        auto tree = random_tree(rng, 4, true);
        auto root = tmp.path / ("tree" + std::to_string(i));
        write_tree(root, tree);
        CHECK(hash_tree(root).hex() == oracle_hash(root));
        CHECK(hash_tree(tree).hex() == oracle_hash(root));
    }
}
