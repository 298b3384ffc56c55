// Serves the toy world over the adapter protocol on stdin/stdout, or on a
// TCP port with --port.
#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdio>
#include <ext/stdio_filebuf.h>
#include <iostream>

#include "CLI11.hpp"
#include "icd/toy_world.hpp"

int main(int argc, char** argv) {
    CLI::App app{"icd-toyenv: toy world adapter server"};
    std::string world_path;
    int port = 0;
    bool once = false;
    app.add_option("--world", world_path, "toy world spec (JSON); default map when omitted");
    app.add_option("--port", port, "listen on 127.0.0.1:PORT instead of stdio");
    app.add_flag("--once", once, "exit after the first TCP client disconnects");
    CLI11_PARSE(app, argc, argv);

    try {
        auto spec = world_path.empty() ? icd::env::ToyWorldSpec::standard() : icd::env::ToyWorldSpec::load(world_path);
        icd::env::ToyEnvironmentFactory factory(spec);
        if (port == 0) {
            icd::env::serve_protocol(std::cin, std::cout, factory);
            return 0;
        }
        int srv = ::socket(AF_INET, SOCK_STREAM, 0);
        int yes = 1;
        ::setsockopt(srv, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        if (::bind(srv, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(srv, 4) != 0) {
            std::perror("listen");
            return 2;
        }
        do {
            int fd = ::accept(srv, nullptr, nullptr);
            if (fd < 0) continue;
            __gnu_cxx::stdio_filebuf<char> inbuf(fd, std::ios::in);
            __gnu_cxx::stdio_filebuf<char> outbuf(::dup(fd), std::ios::out);
            std::istream in(&inbuf);
            std::ostream out(&outbuf);
            icd::env::serve_protocol(in, out, factory);
        } while (!once);
        ::close(srv);
    } catch (const std::exception& e) {
        std::cerr << "icd-toyenv: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
