#pragma once
///@file Canonical archive: deterministic, metadata-free serialization of a
/// file tree, and the content hash derived from it. Bit-compatible with the
/// Nix Archive format so attested hashes line up with ecosystem hashes.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "lila/error.hpp"
#include "lila/store_path.hpp"

namespace lila {

class InvalidEntryName : public Error
{
public:
    using Error::Error;
};

class MalformedArchive : public Error
{
public:
    MalformedArchive(std::size_t offset, const std::string & msg);

    std::size_t offset;
};

class UnsupportedNodeType : public Error
{
public:
    using Error::Error;
};

/* In-memory file tree. Carries contents, symlink targets and the single
   executable flag; no timestamps, owners or other permission bits. */
struct FsTree
{
    struct Regular
    {
        bool executable = false;
        std::string contents;

        bool operator==(const Regular &) const = default;
    };

    struct Symlink
    {
        std::string target;

        bool operator==(const Symlink &) const = default;
    };

    struct Directory
    {
        /* Kept sorted bytewise by name; add() enforces order, uniqueness
           and name validity. */
        std::vector<std::pair<std::string, FsTree>> entries;

        void add(std::string name, FsTree child);

        bool operator==(const Directory &) const = default;
    };

    std::variant<Regular, Symlink, Directory> node = Regular{};

    bool operator==(const FsTree &) const = default;
};

/* Directory entry names must be non-empty, contain no `/` or NUL, and be
   neither `.` nor `..`. */
bool is_valid_entry_name(std::string_view name);

using ByteSink = std::function<void(std::string_view)>;

/* Framing primitive: 8-byte little-endian length, payload, zero padding to
   the next multiple of 8. */
void encode_string(std::string_view s, const ByteSink & sink);
std::string encode_string(std::string_view s);

void encode_tree(const FsTree & tree, const ByteSink & sink);
std::string encode_tree(const FsTree & tree);

/* Walk a filesystem tree and emit its archive encoding, streaming regular
   file contents in chunks. Ignores timestamps and ownership; a file is
   executable iff its owner-execute bit is set. */
void encode_path(const std::filesystem::path & path, const ByteSink & sink);

/* Strict inverse of encode_tree on its image: bad magic, non-zero padding,
   unsorted or invalid directory entries, and trailing bytes are all
   rejected, so every accepted input re-encodes to itself. */
FsTree decode_tree(std::string_view bytes);

OutputHash hash_tree(const FsTree & tree);
OutputHash hash_tree(const std::filesystem::path & path);

}
