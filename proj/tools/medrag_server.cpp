#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "medrag/error.hpp"
#include "medrag/service.hpp"

namespace {
medrag::service::Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HTTP front end for retrieval-augmented question answering"};
  std::string config_path;
  app.add_option("--config", config_path, "service config JSON")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    medrag::service::Service service(medrag::service::load_config(config_path));
    const int port = service.bind();
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "medrag_server listening on " << service.config().bind_address << ':' << port << std::endl;
    service.listen();
    g_service = nullptr;
  } catch (const medrag::Error& e) {
    std::cerr << "medrag_server: " << e.what() << '\n';
    return e.code() == medrag::Errc::io || e.code() == medrag::Errc::parse ||
                   e.code() == medrag::Errc::invalid_argument
               ? 2
               : 1;
  } catch (const std::exception& e) {
    std::cerr << "medrag_server: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
