# Gametodyn package
