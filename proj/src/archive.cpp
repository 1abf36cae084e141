#include "lila/archive.hpp"

#include <sodium.h>

#include <cstring>
#include <fstream>
#include <system_error>

namespace lila {

namespace fs = std::filesystem;

static const std::string archive_magic = "nix-archive-1";

MalformedArchive::MalformedArchive(std::size_t offset, const std::string & msg)
    : Error("malformed archive at byte " + std::to_string(offset) + ": " + msg)
    , offset(offset)
{
}

bool is_valid_entry_name(std::string_view name)
{
    return !name.empty() && name != "." && name != ".."
        && name.find('/') == std::string_view::npos
        && name.find('\0') == std::string_view::npos;
}

void FsTree::Directory::add(std::string name, FsTree child)
{
    if (!is_valid_entry_name(name))
        throw InvalidEntryName("invalid directory entry name '" + name + "'");
    auto pos = std::lower_bound(
        entries.begin(), entries.end(), name,
        [](const auto & entry, const std::string & n) { return entry.first < n; });
    if (pos != entries.end() && pos->first == name)
        throw InvalidEntryName("duplicate directory entry '" + name + "'");
    entries.emplace(pos, std::move(name), std::move(child));
}

void encode_string(std::string_view s, const ByteSink & sink)
{
    std::uint8_t len[8];
    std::uint64_t n = s.size();
    for (int i = 0; i < 8; i++)
        len[i] = static_cast<std::uint8_t>(n >> (8 * i));
    sink(std::string_view(reinterpret_cast<const char *>(len), 8));
    sink(s);
    static const char zeros[8] = {};
    if (n % 8 != 0)
        sink(std::string_view(zeros, 8 - n % 8));
}

std::string encode_string(std::string_view s)
{
    std::string out;
    encode_string(s, [&](std::string_view b) { out.append(b); });
    return out;
}

/* Emits the length framing and padding for a regular file whose contents
   arrive through `feed` in chunks; used for both in-memory and streamed
   file bodies. */
static void encode_contents(std::uint64_t size, const ByteSink & sink, const std::function<void(const ByteSink &)> & feed)
{
    std::uint8_t len[8];
    for (int i = 0; i < 8; i++)
        len[i] = static_cast<std::uint8_t>(size >> (8 * i));
    sink(std::string_view(reinterpret_cast<const char *>(len), 8));
    feed(sink);
    static const char zeros[8] = {};
    if (size % 8 != 0)
        sink(std::string_view(zeros, 8 - size % 8));
}

static void encode_node(const FsTree & tree, const ByteSink & sink)
{
    encode_string("(", sink);
    if (auto * reg = std::get_if<FsTree::Regular>(&tree.node)) {
        encode_string("type", sink);
        encode_string("regular", sink);
        if (reg->executable) {
            encode_string("executable", sink);
            encode_string("", sink);
        }
        encode_string("contents", sink);
        encode_string(reg->contents, sink);
    } else if (auto * link = std::get_if<FsTree::Symlink>(&tree.node)) {
        encode_string("type", sink);
        encode_string("symlink", sink);
        encode_string("target", sink);
        encode_string(link->target, sink);
    } else {
        auto & dir = std::get<FsTree::Directory>(tree.node);
        encode_string("type", sink);
        encode_string("directory", sink);
        const std::string * prev = nullptr;
        for (auto & [name, child] : dir.entries) {
            if (!is_valid_entry_name(name) || (prev && !(*prev < name)))
                throw InvalidEntryName("directory entries invalid or not in sorted order at '" + name + "'");
            prev = &name;
            encode_string("entry", sink);
            encode_string("(", sink);
            encode_string("name", sink);
            encode_string(name, sink);
            encode_string("node", sink);
            encode_node(child, sink);
            encode_string(")", sink);
        }
    }
    encode_string(")", sink);
}

void encode_tree(const FsTree & tree, const ByteSink & sink)
{
    encode_string(archive_magic, sink);
    encode_node(tree, sink);
}

std::string encode_tree(const FsTree & tree)
{
    std::string out;
    encode_tree(tree, [&](std::string_view b) { out.append(b); });
    return out;
}

// -- filesystem walk ------------------------------------------------------

static void stream_file(const fs::path & path, std::uint64_t size, const ByteSink & sink)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "' for reading");
    encode_contents(size, sink, [&](const ByteSink & s) {
        char buf[65536];
        std::uint64_t left = size;
        while (left > 0) {
            auto want = static_cast<std::streamsize>(std::min<std::uint64_t>(left, sizeof(buf)));
            in.read(buf, want);
            if (in.gcount() != want)
                throw IoError("short read from '" + path.string() + "' (file changed during hashing?)");
            s(std::string_view(buf, static_cast<std::size_t>(want)));
            left -= static_cast<std::uint64_t>(want);
        }
    });
}

static void encode_fs_node(const fs::path & path, const ByteSink & sink)
{
    std::error_code ec;
    auto st = fs::symlink_status(path, ec);
    if (ec)
        throw IoError("cannot stat '" + path.string() + "': " + ec.message());

    encode_string("(", sink);
    if (st.type() == fs::file_type::regular) {
        encode_string("type", sink);
        encode_string("regular", sink);
        if ((st.permissions() & fs::perms::owner_exec) != fs::perms::none) {
            encode_string("executable", sink);
            encode_string("", sink);
        }
        auto size = fs::file_size(path, ec);
        if (ec)
            throw IoError("cannot size '" + path.string() + "': " + ec.message());
        encode_string("contents", sink);
        stream_file(path, size, sink);
    } else if (st.type() == fs::file_type::symlink) {
        auto target = fs::read_symlink(path, ec);
        if (ec)
            throw IoError("cannot read symlink '" + path.string() + "': " + ec.message());
        encode_string("type", sink);
        encode_string("symlink", sink);
        encode_string("target", sink);
        encode_string(target.string(), sink);
    } else if (st.type() == fs::file_type::directory) {
        encode_string("type", sink);
        encode_string("directory", sink);
        std::vector<std::string> names;
        for (auto & entry : fs::directory_iterator(path, ec))
            names.push_back(entry.path().filename().string());
        if (ec)
            throw IoError("cannot list '" + path.string() + "': " + ec.message());
        std::sort(names.begin(), names.end());
        for (auto & name : names) {
            encode_string("entry", sink);
            encode_string("(", sink);
            encode_string("name", sink);
            encode_string(name, sink);
            encode_string("node", sink);
            encode_fs_node(path / name, sink);
            encode_string(")", sink);
        }
    } else if (st.type() == fs::file_type::not_found) {
        throw IoError("path '" + path.string() + "' does not exist");
    } else {
        throw UnsupportedNodeType("path '" + path.string() + "' is neither regular, symlink nor directory");
    }
    encode_string(")", sink);
}

void encode_path(const fs::path & path, const ByteSink & sink)
{
    try {
        encode_string(archive_magic, sink);
        encode_fs_node(path, sink);
    } catch (const fs::filesystem_error & e) {
        throw IoError(e.what());
    }
}

// -- decoding --------------------------------------------------------------

namespace {

struct Decoder
{
    std::string_view input;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string & msg) const { throw MalformedArchive(pos, msg); }

    std::string_view take(std::size_t n)
    {
        if (input.size() - pos < n)
            fail("unexpected end of archive");
        auto out = input.substr(pos, n);
        pos += n;
        return out;
    }

    std::string read_string()
    {
        auto at = pos;
        auto len_bytes = take(8);
        std::uint64_t len = 0;
        for (int i = 7; i >= 0; i--)
            len = (len << 8) | static_cast<std::uint8_t>(len_bytes[i]);
        if (len > input.size() - pos)
            throw MalformedArchive(at, "string length exceeds remaining input");
        auto payload = take(static_cast<std::size_t>(len));
        if (len % 8 != 0) {
            auto padding = take(8 - len % 8);
            for (char c : padding)
                if (c != '\0')
                    fail("non-zero padding byte");
        }
        return std::string(payload);
    }

    void expect(std::string_view token, const char * what)
    {
        auto at = pos;
        if (read_string() != token)
            throw MalformedArchive(at, std::string("expected ") + what);
    }

    FsTree read_node()
    {
        expect("(", "node opening tag");
        expect("type", "type tag");
        auto type = read_string();

        FsTree tree;
        if (type == "regular") {
            FsTree::Regular reg;
            auto at = pos;
            auto tag = read_string();
            if (tag == "executable") {
                reg.executable = true;
                at = pos;
                if (!read_string().empty())
                    throw MalformedArchive(at, "executable marker has a non-empty value");
                at = pos;
                tag = read_string();
            }
            if (tag != "contents")
                throw MalformedArchive(at, "expected contents tag");
            reg.contents = read_string();
            tree.node = std::move(reg);
        } else if (type == "symlink") {
            expect("target", "target tag");
            tree.node = FsTree::Symlink{read_string()};
        } else if (type == "directory") {
            FsTree::Directory dir;
            const std::string * prev = nullptr;
            while (true) {
                auto at = pos;
                auto tag = read_string();
                if (tag == ")")
                    break;
                if (tag != "entry")
                    throw MalformedArchive(at, "expected entry or closing tag");
                expect("(", "entry opening tag");
                expect("name", "name tag");
                at = pos;
                auto name = read_string();
                if (!is_valid_entry_name(name))
                    throw MalformedArchive(at, "invalid entry name '" + name + "'");
                if (prev && !(*prev < name))
                    throw MalformedArchive(at, "directory entries not sorted");
                expect("node", "node tag");
                auto child = read_node();
                expect(")", "entry closing tag");
                dir.entries.emplace_back(std::move(name), std::move(child));
                prev = &dir.entries.back().first;
            }
            tree.node = std::move(dir);
            return tree; // directory consumed its own ")"
        } else {
            fail("unknown node type '" + type + "'");
        }
        expect(")", "node closing tag");
        return tree;
    }
};

}

FsTree decode_tree(std::string_view bytes)
{
    Decoder d{bytes};
    d.expect(archive_magic, "archive magic");
    auto tree = d.read_node();
    if (d.pos != bytes.size())
        throw MalformedArchive(d.pos, "trailing bytes after archive");
    return tree;
}

// -- hashing -----------------------------------------------------------------

namespace {

struct Sha256Sink
{
    crypto_hash_sha256_state state;

    Sha256Sink() { crypto_hash_sha256_init(&state); }

    void operator()(std::string_view bytes)
    {
        crypto_hash_sha256_update(&state, reinterpret_cast<const unsigned char *>(bytes.data()), bytes.size());
    }

    OutputHash finish()
    {
        unsigned char digest[crypto_hash_sha256_BYTES];
        crypto_hash_sha256_final(&state, digest);
        char hex[crypto_hash_sha256_BYTES * 2 + 1];
        sodium_bin2hex(hex, sizeof(hex), digest, sizeof(digest));
        return OutputHash(std::string(hex, crypto_hash_sha256_BYTES * 2));
    }
};

}

OutputHash hash_tree(const FsTree & tree)
{
    Sha256Sink sha;
    encode_tree(tree, [&](std::string_view b) { sha(b); });
    return sha.finish();
}

OutputHash hash_tree(const fs::path & path)
{
    Sha256Sink sha;
    encode_path(path, [&](std::string_view b) { sha(b); });
    return sha.finish();
}

}
